//! OCR-style corruptions of an answer, used as wrong proposals in negative
//! connector samples.

use std::collections::HashSet;
use std::sync::LazyLock;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde_json::Value;

use super::links::{LINK_CLOSE, LINK_OPEN};
use crate::corpus::qa_listing;
use crate::endpoint::{ChatRequest, Endpoint};
use crate::error::{Error, Result};
use crate::metrics::normalize;

const PERTURB_PROMPT: &str = "**Task Description**

You are tasked with generating potential OCR (Optical Character Recognition) error results based on the provided list of question-answer (QA) pairs.

**Provided Content:**

**List of QA Pairs:**
{Question_Answering}

**Your Task**

For each QA pair, provide **3 possible OCR error results for the answer (A)**. **Each error result must maintain a similar format, contain different content, must not be identical to the original answer (A), and must be distinct from the other error results.**

**Output Format**

Please respond in **JSON** format according to the structure provided below. Note that \"error1,\" \"error2,\" and \"error3\" are merely placeholders.
{\"error1\": \"...\", \"error2\": \"...\", \"error3\": \"...\"}";

/// Look-alike glyph groups, applied in both directions.
pub const CONFUSIONS: [(&str, &str); 7] = [
    ("l", "I"),
    ("O", "0"),
    ("rn", "m"),
    ("1", "l"),
    ("5", "S"),
    ("c", "e"),
    ("a", "o"),
];

/// Characters tried, in order, when appending to very short answers.
const APPEND_FALLBACK: [char; 6] = ['.', '1', 'l', '0', '-', 'i'];

static JSON_OBJECT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)\{.*\}").unwrap());

pub fn perturbation_prompt(question: &str, answer: &str) -> String {
    PERTURB_PROMPT.replace("{Question_Answering}", &qa_listing([(question, answer)]))
}

/// Confusion-table substitutions first, then single-char drops and
/// duplications, each group shuffled by `rng`.
fn local_candidates(answer: &str, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut swaps = Vec::new();
    for (a, b) in CONFUSIONS {
        for (from, to) in [(a, b), (b, a)] {
            for (i, _) in answer.match_indices(from) {
                swaps.push(format!("{}{}{}", &answer[..i], to, &answer[i + from.len()..]));
            }
        }
    }
    swaps.sort();
    swaps.dedup();
    swaps.shuffle(rng);

    let chars: Vec<char> = answer.chars().collect();
    let mut edits = Vec::new();
    for i in 0..chars.len() {
        let dropped: String = chars[..i].iter().chain(&chars[i + 1..]).collect();
        edits.push(dropped);
        let duplicated: String = chars[..=i].iter().chain(&chars[i..]).collect();
        edits.push(duplicated);
    }
    edits.sort();
    edits.dedup();
    edits.shuffle(rng);

    let appended = APPEND_FALLBACK.iter().map(|c| format!("{answer}{c}"));
    swaps.into_iter().chain(edits).chain(appended).collect()
}

/// Accepts `candidate` if it is non-empty, free of link tokens and differs
/// from the answer and every accepted variant after normalization.
fn admit(candidate: &str, seen: &mut HashSet<String>) -> bool {
    if candidate.trim().is_empty() || candidate.contains(LINK_OPEN) || candidate.contains(LINK_CLOSE)
    {
        return false;
    }
    seen.insert(normalize(candidate))
}

pub fn parse_perturbation_reply(reply: &str) -> Option<Vec<String>> {
    let block = JSON_OBJECT.find(reply)?;
    let value: Value = serde_json::from_str(block.as_str()).ok()?;
    let obj = value.as_object()?;
    Some(
        ["error1", "error2", "error3"]
            .iter()
            .filter_map(|k| obj.get(*k).and_then(Value::as_str).map(str::to_string))
            .collect(),
    )
}

pub fn perturb_answer(answer: &str, seed: u64, endpoint: Option<&dyn Endpoint>) -> Result<[String; 3]> {
    perturb_answer_for("", answer, seed, endpoint)
}

/// Three wrong readings of `answer`, pairwise distinct and distinct from it
/// under normalization. Endpoint proposals are used when valid; anything
/// missing or invalid is filled from the seeded local generator.
pub fn perturb_answer_for(
    question: &str,
    answer: &str,
    seed: u64,
    endpoint: Option<&dyn Endpoint>,
) -> Result<[String; 3]> {
    if answer.trim().is_empty() {
        return Err(Error::EmptyAnswer);
    }
    let mut seen = HashSet::from([normalize(answer)]);
    let mut out: Vec<String> = Vec::with_capacity(3);

    if let Some(ep) = endpoint {
        let reply = ep.complete(&ChatRequest::new(perturbation_prompt(question, answer)))?;
        match parse_perturbation_reply(&reply) {
            Some(proposals) => {
                for p in proposals {
                    if out.len() < 3 && admit(&p, &mut seen) {
                        out.push(p);
                    } else {
                        warn!("rejected perturbation {p:?} of {answer:?}");
                    }
                }
            }
            None => warn!("unparseable perturbation reply for {answer:?}; using local variants"),
        }
    }

    if out.len() < 3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for c in local_candidates(answer, &mut rng) {
            if out.len() == 3 {
                break;
            }
            if admit(&c, &mut seen) {
                out.push(c);
            }
        }
    }
    out.try_into()
        .map_err(|_| Error::PerturbationImpossible(answer.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::endpoint::FnEndpoint;
    use crate::metrics::levenshtein;

    fn local(answer: &str, seed: u64) -> [String; 3] {
        perturb_answer(answer, seed, None).unwrap()
    }

    #[test]
    fn doral_seed_7() {
        let v = local("Doral", 7);
        assert_eq!(v, ["Dorol", "Daral", "DoraI"]);
        for s in &v {
            assert_ne!(s, "Doral");
            assert!(levenshtein(s, "Doral") <= 2, "{s}");
        }
        assert_ne!(v[0], v[1]);
        assert_ne!(v[1], v[2]);
        assert_ne!(v[0], v[2]);
    }

    #[test]
    fn one_char_answers_fall_back() {
        for a in ["7", "x", "%", "I"] {
            let v = local(a, 0);
            let set: HashSet<_> = v.iter().map(|s| normalize(s)).collect();
            assert_eq!(set.len(), 3);
            assert!(!set.contains(&normalize(a)));
        }
        assert!(matches!(perturb_answer(" ", 0, None), Err(Error::EmptyAnswer)));
    }

    #[test]
    fn whitespace_duplication_is_not_a_variant() {
        for seed in 0..50 {
            for s in local("a b", seed) {
                assert_ne!(normalize(&s), "a b");
            }
        }
    }

    #[test]
    fn endpoint_proposals_used() {
        let ep = FnEndpoint::new("m", |req: &ChatRequest| {
            assert!(req.prompt.contains("A1: Doral"));
            assert!(req.images.is_empty());
            Ok("```json\n{\"error1\":\"Dora1\",\"error2\":\"Doral.\",\"error3\":\"Dorai\"}\n```".into())
        });
        assert_eq!(
            perturb_answer("Doral", 1, Some(&ep)).unwrap(),
            ["Dora1", "Doral.", "Dorai"]
        );
    }

    #[test]
    fn invalid_proposals_replaced_locally() {
        let ep = FnEndpoint::new("m", |_: &ChatRequest| {
            Ok(r#"{"error1":"Doral","error2":"Dora1","error3":"dora1"}"#.into())
        });
        let v = perturb_answer("Doral", 3, Some(&ep)).unwrap();
        assert_eq!(v[0], "Dora1");
        assert!(v[1..].iter().all(|s| normalize(s) != "doral" && normalize(s) != "dora1"));

        let ep = FnEndpoint::new("m", |_: &ChatRequest| Ok("I cannot help".into()));
        assert_eq!(perturb_answer("Doral", 3, Some(&ep)).unwrap(), local("Doral", 3));
    }
}
