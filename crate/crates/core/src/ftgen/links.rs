use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LINK_OPEN: &str = "<CPLINK>";
pub const LINK_CLOSE: &str = "</CPLINK>";
pub const LINK_INSTRUCTION: &str = "<CPLINK>XXX</CPLINK> indicates the OCR-derived answer.";

/// Text between one open/close link-token pair. Offsets count chars in the
/// owning string; `start..end` covers `text` only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSpan {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

fn has_link_token(s: &str) -> bool {
    s.contains(LINK_OPEN) || s.contains(LINK_CLOSE)
}

pub fn wrap_link_tokens(answer: &str) -> Result<String> {
    if answer.is_empty() {
        return Err(Error::EmptyAnswer);
    }
    if has_link_token(answer) {
        return Err(Error::EmbeddedLinkToken);
    }
    Ok(format!("{LINK_OPEN}{answer}{LINK_CLOSE}"))
}

/// Appends the link-token instruction on a new line.
pub fn augment_cognitive_query(question: &str) -> Result<String> {
    if question.contains(LINK_INSTRUCTION) {
        return Err(Error::AlreadyAugmented);
    }
    if question.trim().is_empty() {
        warn!("augmenting an empty question");
        return Ok(LINK_INSTRUCTION.to_string());
    }
    Ok(format!("{question}\n{LINK_INSTRUCTION}"))
}

pub fn parse_link_spans(response: &str) -> Result<Vec<LinkSpan>> {
    let mut spans = Vec::new();
    // (byte, char) offsets of the current span's first payload char
    let mut open: Option<(usize, usize)> = None;
    let mut chars_seen = 0;
    let mut byte = 0;
    while byte < response.len() {
        let rest = &response[byte..];
        if rest.starts_with(LINK_OPEN) {
            if let Some((_, c)) = open {
                return Err(Error::MalformedLinks {
                    offset: chars_seen,
                    reason: format!("nested open token (span opened at char {c})"),
                });
            }
            byte += LINK_OPEN.len();
            chars_seen += LINK_OPEN.chars().count();
            open = Some((byte, chars_seen));
        } else if rest.starts_with(LINK_CLOSE) {
            let Some((b, c)) = open.take() else {
                return Err(Error::MalformedLinks {
                    offset: chars_seen,
                    reason: "close token without open token".into(),
                });
            };
            if b == byte {
                return Err(Error::MalformedLinks {
                    offset: c,
                    reason: "empty span".into(),
                });
            }
            spans.push(LinkSpan {
                text: response[b..byte].to_string(),
                start: c,
                end: chars_seen,
            });
            byte += LINK_CLOSE.len();
            chars_seen += LINK_CLOSE.chars().count();
        } else {
            let ch = rest.chars().next().expect("non-empty rest");
            byte += ch.len_utf8();
            chars_seen += 1;
        }
    }
    if let Some((_, c)) = open {
        return Err(Error::MalformedLinks {
            offset: c,
            reason: "unclosed span".into(),
        });
    }
    Ok(spans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wraps_verbatim() {
        assert_eq!(wrap_link_tokens("Doral").unwrap(), "<CPLINK>Doral</CPLINK>");
        assert_eq!(wrap_link_tokens("a<b").unwrap(), "<CPLINK>a<b</CPLINK>");
        assert!(matches!(wrap_link_tokens(""), Err(Error::EmptyAnswer)));
        assert!(matches!(
            wrap_link_tokens("x</CPLINK>"),
            Err(Error::EmbeddedLinkToken)
        ));
    }

    #[test]
    fn augments_once() {
        let q = augment_cognitive_query("Who signed?").unwrap();
        assert_eq!(
            q,
            "Who signed?\n<CPLINK>XXX</CPLINK> indicates the OCR-derived answer."
        );
        assert!(matches!(augment_cognitive_query(&q), Err(Error::AlreadyAugmented)));
        assert_eq!(augment_cognitive_query("").unwrap(), LINK_INSTRUCTION);
    }

    #[test]
    fn parses_spans() {
        let s = "<CPLINK>a</CPLINK> and <CPLINK>b</CPLINK>";
        let spans = parse_link_spans(s).unwrap();
        let texts: Vec<_> = spans.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(texts, ["a", "b"]);
        assert_eq!((spans[0].start, spans[0].end), (8, 9));
        assert!(parse_link_spans("no tags").unwrap().is_empty());
        assert!(matches!(
            parse_link_spans("<CPLINK>a"),
            Err(Error::MalformedLinks { .. })
        ));
        assert!(parse_link_spans("a</CPLINK>").is_err());
        assert!(parse_link_spans("<CPLINK><CPLINK>a</CPLINK></CPLINK>").is_err());
        assert!(parse_link_spans("<CPLINK></CPLINK>").is_err());
    }

    #[test]
    fn offsets_count_chars() {
        let s = "é <CPLINK>Dörál</CPLINK>";
        let span = &parse_link_spans(s).unwrap()[0];
        let chars: Vec<char> = s.chars().collect();
        let text: String = chars[span.start..span.end].iter().collect();
        assert_eq!(text, "Dörál");
    }

    proptest! {
        #[test]
        fn wrap_round_trips(a in "[^<]{1,20}", pre in "[a-z ]{0,5}", post in "[a-z .]{0,5}") {
            let wrapped = wrap_link_tokens(&a).unwrap();
            let s = format!("{pre}{wrapped}{post}");
            let spans = parse_link_spans(&s).unwrap();
            prop_assert_eq!(spans.len(), 1);
            prop_assert_eq!(&spans[0].text, &a);
            let chars: Vec<char> = s.chars().collect();
            let cut: String = chars[spans[0].start..spans[0].end].iter().collect();
            prop_assert_eq!(cut, a);
        }
    }
}
