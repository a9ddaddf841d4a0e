use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::pairgen::PERCEPTUAL_QUESTION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Cognitive,
    Perceptual,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Cognitive => "cognitive",
            Task::Perceptual => "perceptual",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Prompt style. `Closed` wraps questions in the per-dataset instructions
/// tuned for hosted models; `Sft` sends bare questions, as seen by models
/// fine-tuned on the raw datasets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Closed,
    Sft,
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "closed" => Ok(Profile::Closed),
            "sft" => Ok(Profile::Sft),
            other => Err(format!("unknown profile `{other}` (expected closed or sft)")),
        }
    }
}

const DOCVQA: &str = "You are asked to answer questions asked on a document image.
The answers to questions are short text spans taken verbatim from the document.
This means that the answers comprise a set of contiguous text tokens present in the document.

Question: {Question}

Directly extract the answer of the question from the document with as few words as possible.

Answer:";

const DEEPFORM: &str = "You are now working on DeepForm, a dataset for extracting text from visually structured political ad receipts. This dataset focuses on five key fields:

1. **contract_num**: Contract number (multiple documents can share the same number if a contract is revised)
2. **advertiser**: Advertiser name (often a political committee, but not always)
3. **flight_from / flight_to**: Start and end air dates for the ad (also known as \"flight dates\")
4. **gross_amount**: Total amount paid for the ads

The answer always appears in the document, but it may not match the exact words of the question or field name. Provide a contiguous text span from the form, and include no additional explanation besides the answer.

Question: {Question}

Answer:";

const FUNSD: &str = "You are now working on FUNSD, a dataset for form understanding in scanned documents. These documents often contain text arranged in various sections, tables, or multi-line blocks, and your goal is to extract the text that directly answers each question. Your task is to return the contiguous text snippet from the document that fully answers each question. The answer is guaranteed to be present in the form image, so do not refuse. If the relevant text spans multiple lines or rows in a table, ensure you include all of them exactly as they appear. Avoid adding explanations or summarizing the text; simply return a contiguous text snippet from the form that best addresses the question.

Question: {Question}

Answer:";

const CHARTQA: &str = "You are analyzing a chart that may include numeric data, textual labels, and visual features (e.g., bars, lines, colors). Below are some example questions and answers from other charts\u{2014}these examples are not from this chart. When answering the current question, rely solely on the information in the chart you are analyzing, and provide a concise answer based strictly on the chart\u{2019}s data. Avoid outside knowledge or extra explanations.

Additionally, the question is guaranteed to have an answer found in the chart. For numeric answers, remove any commas or symbols (e.g., \u{201c}%\u{201d}) unless specifically asked for. For instance, \u{201c}37,133\u{201d} should be written as \u{201c}37133\u{201d} and \u{201c}32.4%\u{201d} should be written as \u{201c}32.4.\u{201d}

Question: {Question}

Answer:";

pub const OCR_PROMPT: &str = "Analyze the provided image, which has a **single red box** containing text. **Extract only** the text inside this box, preserving the **original line order** from **top** to **bottom**. If there are multiple lines, output them **separately**; if there's just one line, output it **as is**. **Do not** include any text or descriptions from outside the red box, and **do not** add any extra punctuation, commentary, or code block markers. Return **only** the exact text inside the red box.";

/// Cognitive template for a dataset. Custom corpora use the DocVQA wording.
pub fn cognitive_template(dataset: Dataset) -> &'static str {
    match dataset {
        Dataset::Docvqa | Dataset::Dude | Dataset::Custom => DOCVQA,
        Dataset::Deepform => DEEPFORM,
        Dataset::Funsd => FUNSD,
        Dataset::Chartqa => CHARTQA,
    }
}

pub fn prompt_for(dataset: Dataset, task: Task, question: &str, profile: Profile) -> String {
    match (task, profile) {
        (Task::Cognitive, Profile::Closed) => {
            cognitive_template(dataset).replace("{Question}", question)
        }
        (Task::Cognitive, Profile::Sft) => question.to_string(),
        (Task::Perceptual, Profile::Closed) => OCR_PROMPT.to_string(),
        (Task::Perceptual, Profile::Sft) => PERCEPTUAL_QUESTION.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn docvqa_slot() {
        let p = prompt_for(Dataset::Docvqa, Task::Cognitive, "Who signed?", Profile::Closed);
        assert!(p.contains("short text spans taken verbatim"));
        assert!(p.contains("\nQuestion: Who signed?\n"));
        assert!(p.ends_with("Answer:"));
        assert_eq!(p, prompt_for(Dataset::Dude, Task::Cognitive, "Who signed?", Profile::Closed));
    }

    #[test]
    fn dataset_specific_wording() {
        let chart = prompt_for(Dataset::Chartqa, Task::Cognitive, "q", Profile::Closed);
        assert!(chart.contains("\u{201c}32.4%\u{201d} should be written as \u{201c}32.4.\u{201d}"));
        let form = prompt_for(Dataset::Funsd, Task::Cognitive, "q", Profile::Closed);
        assert!(form.contains("contiguous text snippet"));
        let deep = prompt_for(Dataset::Deepform, Task::Cognitive, "q", Profile::Closed);
        assert!(deep.contains("five key fields"));
        assert!(!deep.contains("  "));
    }

    #[test]
    fn perceptual_ignores_question() {
        for ds in Dataset::ALL {
            assert_eq!(
                prompt_for(ds, Task::Perceptual, "ignored", Profile::Sft),
                "What is the text within the red box?"
            );
            let closed = prompt_for(ds, Task::Perceptual, "ignored", Profile::Closed);
            assert!(closed.contains("Extract only"));
            assert!(!closed.contains("ignored"));
        }
    }

    #[test]
    fn sft_cognitive_is_bare() {
        assert_eq!(prompt_for(Dataset::Funsd, Task::Cognitive, "Date?", Profile::Sft), "Date?");
    }
}
