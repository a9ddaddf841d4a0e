//! Dropping QA pairs whose answer is not a span of the page text.

use std::collections::HashMap;
use std::path::Path;
use std::sync::LazyLock;

use log::warn;
use regex::Regex;

use crate::corpus::{qa_listing, CanonicalRecord};
use crate::endpoint::{ChatRequest, Endpoint};
use crate::error::{Error, Result};
use crate::metrics::normalize;

const FILTER_PROMPT: &str = "You are tasked with determining whether the provided question-answer pairs are examples of extractive question answering (Extractive QA).

**You have been provided with the following:**
1. The document image.
2. A list of question-answer pairs.

**Here are the questions and answers:**
{Question_Answering}

**Definition of Extractive QA**
In the domain of document understanding, Extractive Question Answering (Extractive QA) refers to systems that analyze and comprehend both the visual and textual information within a document to directly extract answers to user queries from the document's existing content. The answers are typically located in specific sections of the document, eliminating the need for complex reasoning or the generation of new content. Extractive QA emphasizes precise localization and extraction of information to ensure the accuracy and verifiability of the answers.

**Non-Extractive QA Question Types:**
1. **Counting Questions:** These require the system to count specific elements or occurrences within the document, such as \"How many times is the term 'machine learning' mentioned in the report?\"
2. **Comparing Questions:** These involve evaluating and contrasting different pieces of information within the document, such as \"Which department had a higher budget allocation in Q2, Marketing or Sales?\"
3. **Causal Reasoning:** These questions require understanding cause-effect relationships within the document, such as \"What caused the increase in operational costs?\"
4. **Synthesis Questions:** These require summarizing or aggregating information from the document, such as \"Summarize the key findings of the annual report.\"
5. **Inference Questions:** These ask for conclusions based on implicit information within the document, such as \"What can be inferred about the company's market strategy from the sales data?\"

**Your Task**
For each question in the list, determine whether it is an example of extractive QA based on the definition provided.

**Important:**
- **Do not include any explanatory content in your response.**
- **Respond in the following format for each question:**
- If the question is extractive QA, respond with: \"Yes\".
- If the question is not extractive QA, respond with: \"No\".

**Example Response:**
Q1: Yes
Q2: No
Q3: Yes";

static VERDICT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?im)^\s*Q(\d+)\s*:\s*(yes|no)\b").unwrap());

pub fn filter_prompt(record: &CanonicalRecord) -> String {
    let listing = qa_listing(
        record
            .qa
            .iter()
            .map(|qa| (qa.question.as_str(), qa.answer.as_str())),
    );
    FILTER_PROMPT.replace("{Question_Answering}", &listing)
}

/// Keeps a QA iff its normalized answer is a substring of the record's
/// normalized OCR text.
pub fn is_extractive_local(record: &CanonicalRecord, answer: &str) -> bool {
    let answer = normalize(answer);
    !answer.is_empty() && normalize(&record.full_text()).contains(&answer)
}

/// Yes/No verdicts keyed by 1-based question number. Later lines for the
/// same number win.
pub fn parse_filter_reply(reply: &str) -> HashMap<usize, bool> {
    VERDICT
        .captures_iter(reply)
        .filter_map(|c| {
            let n = c[1].parse::<usize>().ok()?;
            Some((n, c[2].eq_ignore_ascii_case("yes")))
        })
        .collect()
}

/// One `(qa_id, keep)` per QA, in record order. With an endpoint, all of the
/// record's QA go out in one request; a QA missing from the reply is
/// dropped.
pub fn filter_extractive(
    record: &CanonicalRecord,
    endpoint: Option<&dyn Endpoint>,
    image_root: &Path,
) -> Result<Vec<(String, bool)>> {
    if record.qa.is_empty() {
        return Err(Error::EmptyInput);
    }
    let Some(endpoint) = endpoint else {
        return Ok(record
            .qa
            .iter()
            .map(|qa| (qa.qa_id.clone(), is_extractive_local(record, &qa.answer)))
            .collect());
    };
    let image = record.resolve_image(image_root);
    let bytes = std::fs::read(&image).map_err(|_| Error::MissingImage(image.clone()))?;
    let reply = endpoint.complete(&ChatRequest::new(filter_prompt(record)).with_image(bytes))?;
    let verdicts = parse_filter_reply(&reply);
    Ok(record
        .qa
        .iter()
        .enumerate()
        .map(|(i, qa)| {
            let keep = verdicts.get(&(i + 1)).copied().unwrap_or_else(|| {
                warn!(
                    "record `{}`: no extractive verdict for Q{} (`{}`), dropping",
                    record.record_id,
                    i + 1,
                    qa.qa_id
                );
                false
            });
            (qa.qa_id.clone(), keep)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{BoundingBox, Dataset, OcrToken, QaAnnotation, Split};
    use crate::endpoint::FnEndpoint;

    fn record(answers: &[&str]) -> CanonicalRecord {
        CanonicalRecord {
            record_id: "r1".into(),
            dataset: Dataset::Docvqa,
            split: Split::Test,
            image_path: "r1.png".into(),
            image_width: 50,
            image_height: 20,
            ocr_tokens: vec![
                OcrToken {
                    token_id: 0,
                    text: "Company:".into(),
                    bbox: BoundingBox::new(0, 0, 20, 10).unwrap(),
                },
                OcrToken {
                    token_id: 1,
                    text: "Doral".into(),
                    bbox: BoundingBox::new(22, 0, 40, 10).unwrap(),
                },
            ],
            qa: answers
                .iter()
                .enumerate()
                .map(|(i, a)| QaAnnotation {
                    qa_id: format!("qa{}", i + 1),
                    question: format!("question {}", i + 1),
                    answer: a.to_string(),
                    page_index: 0,
                })
                .collect(),
        }
    }

    #[test]
    fn heuristic_keeps_present_answers() {
        let r = record(&["Doral", "yes", "company: DORAL"]);
        let kept = filter_extractive(&r, None, Path::new(".")).unwrap();
        assert_eq!(
            kept,
            vec![
                ("qa1".to_string(), true),
                ("qa2".to_string(), false),
                ("qa3".to_string(), true)
            ]
        );
    }

    #[test]
    fn scripted_endpoint_verdicts() {
        let r = record(&["Doral", "yes"]);
        let dir = tempfile::tempdir().unwrap();
        image::RgbImage::new(50, 20).save(dir.path().join("r1.png")).unwrap();
        let ep = FnEndpoint::new("m", |req: &ChatRequest| {
            assert!(req.prompt.contains("Q1: question 1\nA1: Doral"));
            assert!(req.prompt.contains("**Definition of Extractive QA**"));
            Ok("Q1: Yes\nQ2: No".to_string())
        });
        let kept = filter_extractive(&r, Some(&ep), dir.path()).unwrap();
        assert_eq!(kept, vec![("qa1".to_string(), true), ("qa2".to_string(), false)]);
    }

    #[test]
    fn missing_verdict_drops() {
        let r = record(&["Doral", "Doral"]);
        let dir = tempfile::tempdir().unwrap();
        image::RgbImage::new(50, 20).save(dir.path().join("r1.png")).unwrap();
        let ep = FnEndpoint::new("m", |_: &ChatRequest| Ok("Q2: yes".to_string()));
        let kept = filter_extractive(&r, Some(&ep), dir.path()).unwrap();
        assert_eq!(kept, vec![("qa1".to_string(), false), ("qa2".to_string(), true)]);
    }

    #[test]
    fn endpoint_failure_propagates() {
        let r = record(&["Doral"]);
        let dir = tempfile::tempdir().unwrap();
        image::RgbImage::new(50, 20).save(dir.path().join("r1.png")).unwrap();
        let ep = FnEndpoint::new("m", |_: &ChatRequest| {
            Err(crate::EndpointError::Failure("down".into()))
        });
        assert!(matches!(
            filter_extractive(&r, Some(&ep), dir.path()),
            Err(Error::Endpoint(_))
        ));
    }

    #[test]
    fn no_qa_is_an_error() {
        let r = record(&[]);
        assert!(matches!(
            filter_extractive(&r, None, Path::new(".")),
            Err(Error::EmptyInput)
        ));
    }
}
