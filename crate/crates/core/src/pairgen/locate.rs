//! Finding the OCR tokens that hold an answer.

use std::path::Path;
use std::sync::LazyLock;

use log::{debug, warn};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{qa_listing, BoundingBox, CanonicalRecord, QaAnnotation};
use crate::endpoint::{ChatRequest, Endpoint};
use crate::error::{Error, Result};
use crate::metrics::{levenshtein, normalize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    Unique,
    Ambiguous,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Locator {
    Exact,
    Fuzzy,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocatorResult {
    /// Tokens of the chosen run; for `Ambiguous`, the first candidate.
    pub token_ids: Vec<u32>,
    pub merged_box: Option<BoundingBox>,
    pub merged_text: String,
    pub confidence: Confidence,
    /// Every matching run, in reading order.
    pub candidates: Vec<Vec<u32>>,
    pub locator: Locator,
}

impl LocatorResult {
    pub fn none(locator: Locator) -> Self {
        Self {
            token_ids: Vec::new(),
            merged_box: None,
            merged_text: String::new(),
            confidence: Confidence::None,
            candidates: Vec::new(),
            locator,
        }
    }

    fn from_runs(record: &CanonicalRecord, runs: Vec<Vec<u32>>, locator: Locator) -> Self {
        let confidence = match runs.len() {
            0 => return Self::none(locator),
            1 => Confidence::Unique,
            _ => Confidence::Ambiguous,
        };
        let token_ids = runs[0].clone();
        Self {
            merged_box: merged_box(record, &token_ids),
            merged_text: record.joined_text(&token_ids),
            token_ids,
            confidence,
            candidates: runs,
            locator,
        }
    }
}

/// Tight union of the given tokens' boxes. `None` for an empty or invalid
/// id list.
pub fn merged_box(record: &CanonicalRecord, token_ids: &[u32]) -> Option<BoundingBox> {
    token_ids
        .iter()
        .map(|id| record.ocr_tokens.get(*id as usize).map(|t| t.bbox))
        .collect::<Option<Vec<_>>>()?
        .into_iter()
        .reduce(|a, b| a.union(&b))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LocateOptions {
    /// Fall back to a one-edit-per-word match when no exact run exists.
    pub fuzzy: bool,
}

pub fn locate_box(record: &CanonicalRecord, answer: &str) -> LocatorResult {
    locate_box_with(record, answer, LocateOptions::default())
}

/// Finds the shortest runs of consecutive reading-order tokens whose joined
/// normalized text contains the normalized answer. One run is `Unique`,
/// several are `Ambiguous`.
pub fn locate_box_with(record: &CanonicalRecord, answer: &str, opts: LocateOptions) -> LocatorResult {
    let target = normalize(answer);
    if target.is_empty() {
        return LocatorResult::none(Locator::Exact);
    }
    let texts: Vec<String> = record.ocr_tokens.iter().map(|t| normalize(&t.text)).collect();
    let runs = exact_runs(&texts, &target);
    if !runs.is_empty() || !opts.fuzzy {
        return LocatorResult::from_runs(record, runs, Locator::Exact);
    }
    let runs = fuzzy_runs(&texts, &target);
    LocatorResult::from_runs(record, runs, Locator::Fuzzy)
}

fn exact_runs(texts: &[String], target: &str) -> Vec<Vec<u32>> {
    let target_len = target.chars().count();
    // Shortest containing run for every start token.
    let mut found: Vec<(usize, usize)> = Vec::new();
    for start in 0..texts.len() {
        if texts[start].is_empty() {
            continue;
        }
        let first_len = texts[start].chars().count();
        let mut joined = String::new();
        for (end, text) in texts.iter().enumerate().skip(start) {
            if text.is_empty() {
                continue;
            }
            if !joined.is_empty() {
                joined.push(' ');
            }
            joined.push_str(text);
            if joined.contains(target) {
                found.push((start, end));
                break;
            }
            // Any occurrence still needing the start token would have
            // ended by now.
            if joined.chars().count() > first_len + 1 + target_len {
                break;
            }
        }
    }
    // Keep runs that do not strictly contain another run.
    found
        .iter()
        .filter(|&&(s, e)| {
            !found
                .iter()
                .any(|&(s2, e2)| (s2, e2) != (s, e) && s <= s2 && e2 <= e)
        })
        .map(|&(s, e)| {
            (s..=e)
                .filter(|&i| !texts[i].is_empty())
                .map(|i| i as u32)
                .collect()
        })
        .collect()
}

/// Windows of consecutive tokens matching the answer word for word, each
/// word within one edit. Words shorter than three characters must match
/// exactly.
fn fuzzy_runs(texts: &[String], target: &str) -> Vec<Vec<u32>> {
    let words: Vec<&str> = target.split(' ').collect();
    let live: Vec<usize> = (0..texts.len()).filter(|&i| !texts[i].is_empty()).collect();
    if live.len() < words.len() {
        return Vec::new();
    }
    live.windows(words.len())
        .filter(|window| {
            window.iter().zip(&words).all(|(&i, word)| {
                let tok = texts[i].as_str();
                if word.chars().count() < 3 {
                    tok == *word
                } else {
                    levenshtein(tok, word) <= 1
                }
            })
        })
        .map(|window| window.iter().map(|&i| i as u32).collect())
        .collect()
}

const LOCATE_PROMPT: &str = "You are tasked with identifying the locations of answers to multiple questions about a document image.

**You have been provided with the following:**
1. The document image.
2. A list of questions along with their corresponding answers.
3. Text extracted from the document image using an Optical Character Recognition (OCR) engine by a third party.

**Here are the questions and answers:**
{Question_Answering}

**Here is the text extracted by the OCR engine:**
{OCR_Text}

**Your task:**
For each question in the list, first determine whether the answer text can be found within the document image based on the OCR-extracted text. If the answer is present, identify the box ID(s) that contain the correct answer. Each answer appears **only once** in the document image and may be entirely within a single box or span multiple adjacent boxes, either horizontally or vertically. Include all relevant box IDs that collectively constitute the answer. If the answer text cannot be found in any box, indicate this as well.

**It is important to emphasize that you should identify only the boxes that contain the correct answer text, not the boxes that are relevant to answering the question.** In other words, even if a question explicitly mentions a specific box, if the answer text does not appear in that box, it should not be considered.

Keep in mind that you need to find the box that semantically matches the answer, not just the box with the answer text. This means you should fully consider all the information from the document image, including images, text, layout, and style.


**Important:**
- **Do not include any explanatory content in your response.**
- **Respond in the following format for each question:**
- If you find the box(es) containing the true answer, respond with: \"Found [Box IDs]\"
- If you cannot find any boxes containing the true answer, respond with: \"Not Found\"

**Example Response:**
Q1: Found [9, 12]
Q2: Not Found
Q3: Found [15]";

static FOUND: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bfound\s*\[([^\]]*)\]").unwrap());
static NOT_FOUND: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bnot\s+found\b").unwrap());

pub fn locate_prompt(record: &CanonicalRecord, qa: &QaAnnotation) -> String {
    let ocr: Vec<_> = record
        .ocr_tokens
        .iter()
        .map(|t| json!({"box_id": t.token_id, "text": t.text, "box": t.bbox.as_array()}))
        .collect();
    LOCATE_PROMPT
        .replace(
            "{Question_Answering}",
            &qa_listing([(qa.question.as_str(), qa.answer.as_str())]),
        )
        .replace(
            "{OCR_Text}",
            &serde_json::to_string(&ocr).unwrap_or_default(),
        )
}

/// Parses a `Found [ids]` / `Not Found` reply. `Err` carries the reason for
/// an unparseable reply.
pub fn parse_locate_reply(reply: &str) -> Result<Option<Vec<u32>>, String> {
    if let Some(caps) = FOUND.captures(reply) {
        let ids: Result<Vec<u32>, _> = caps[1]
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse::<u32>)
            .collect();
        return match ids {
            Ok(ids) if !ids.is_empty() => Ok(Some(ids)),
            Ok(_) => Err("empty id list".into()),
            Err(e) => Err(format!("bad box id: {e}")),
        };
    }
    if NOT_FOUND.is_match(reply) {
        return Ok(None);
    }
    Err(format!("unrecognized reply {reply:?}"))
}

/// Lets the endpoint pick the answer's boxes when string matching could not
/// settle on one run. A choice whose text does not contain the answer is
/// discarded.
pub fn locate_box_llm(
    record: &CanonicalRecord,
    qa: &QaAnnotation,
    candidates: &[Vec<u32>],
    endpoint: &dyn Endpoint,
    image_root: &Path,
) -> Result<LocatorResult> {
    debug!(
        "asking endpoint to locate qa `{}` ({} string candidates)",
        qa.qa_id,
        candidates.len()
    );
    let image = record.resolve_image(image_root);
    let bytes = std::fs::read(&image).map_err(|_| Error::MissingImage(image.clone()))?;
    let reply = endpoint.complete(&ChatRequest::new(locate_prompt(record, qa)).with_image(bytes))?;
    let ids = match parse_locate_reply(&reply) {
        Ok(Some(ids)) => ids,
        Ok(None) => return Ok(LocatorResult::none(Locator::Llm)),
        Err(reason) => {
            warn!("qa `{}`: unparseable locate reply: {reason}", qa.qa_id);
            return Ok(LocatorResult::none(Locator::Llm));
        }
    };
    let mut ids = ids;
    ids.sort_unstable();
    ids.dedup();
    let Some(bbox) = merged_box(record, &ids) else {
        warn!("qa `{}`: reply names unknown box ids {ids:?}", qa.qa_id);
        return Ok(LocatorResult::none(Locator::Llm));
    };
    let text = record.joined_text(&ids);
    if !normalize(&text).contains(&normalize(&qa.answer)) {
        warn!(
            "qa `{}`: boxes {ids:?} read {text:?}, which lacks the answer",
            qa.qa_id
        );
        return Ok(LocatorResult::none(Locator::Llm));
    }
    Ok(LocatorResult {
        candidates: vec![ids.clone()],
        token_ids: ids,
        merged_box: Some(bbox),
        merged_text: text,
        confidence: Confidence::Unique,
        locator: Locator::Llm,
    })
}
