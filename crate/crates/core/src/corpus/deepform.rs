//! Moving DeepForm QA to the page that actually holds the answer.

use std::collections::HashMap;
use std::path::Path;
use std::sync::LazyLock;

use log::warn;
use regex::Regex;

use super::{qa_listing, CanonicalRecord, QaAnnotation};
use crate::endpoint::{ChatRequest, Endpoint};
use crate::error::{Error, Result};

const PAGE_SELECTION_PROMPT: &str = "You are given several images with the page number indicated in the top left corner.
You will also receive a number of independent question-answer pairs.
For each question, your task is to identify which numbered page provide the information needed to arrive at the given answer.
Note:
- Please identify which page these key-value pairs are most likely to appear on.
- Output only question-answer pair id and its corresponding number. Format: Q1:number
{Question_Answering}";

/// Appended because the page images are sent unannotated.
const PAGE_NUMBERING_NOTE: &str =
    "The images are attached in page order; the first image is page 0, the next page 1, and so on.";

static ANSWER_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^\s*Q(\d+)\s*:\s*(\d+)").unwrap());

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PageSelection {
    /// `(qa_id, page_index)` in the order the QA were given.
    pub assignments: Vec<(String, u32)>,
    pub warnings: Vec<String>,
}

pub fn page_selection_prompt(qa: &[QaAnnotation]) -> String {
    let listing = qa_listing(qa.iter().map(|q| (q.question.as_str(), q.answer.as_str())));
    format!(
        "{}\n{PAGE_NUMBERING_NOTE}",
        PAGE_SELECTION_PROMPT.replace("{Question_Answering}", &listing)
    )
}

/// Asks the endpoint which page answers each question. Single-page documents
/// and offline runs (no endpoint) map everything to page 0; so does any
/// answer the reply does not name or names out of range.
pub fn select_deepform_page(
    doc_pages: &[CanonicalRecord],
    qa: &[QaAnnotation],
    endpoint: Option<&dyn Endpoint>,
    image_root: &Path,
) -> Result<PageSelection> {
    let mut selection = PageSelection::default();
    let all_zero = |selection: &mut PageSelection| {
        selection.assignments = qa.iter().map(|q| (q.qa_id.clone(), 0)).collect();
    };
    if doc_pages.len() <= 1 || qa.is_empty() {
        all_zero(&mut selection);
        return Ok(selection);
    }
    let Some(endpoint) = endpoint else {
        all_zero(&mut selection);
        selection.warnings.push(format!(
            "no endpoint configured; {} qa assigned to page 0",
            qa.len()
        ));
        return Ok(selection);
    };

    let mut request = ChatRequest::new(page_selection_prompt(qa));
    for page in doc_pages {
        let path = page.resolve_image(image_root);
        let bytes = std::fs::read(&path).map_err(|_| Error::MissingImage(path.clone()))?;
        request.images.push(bytes);
    }
    let reply = endpoint.complete(&request)?;

    let parsed: HashMap<usize, u64> = ANSWER_LINE
        .captures_iter(&reply)
        .filter_map(|c| Some((c[1].parse().ok()?, c[2].parse().ok()?)))
        .collect();
    for (idx, q) in qa.iter().enumerate() {
        let page = match parsed.get(&(idx + 1)) {
            Some(&p) if (p as usize) < doc_pages.len() => p as u32,
            Some(&p) => {
                selection.warnings.push(format!(
                    "qa `{}`: page {p} out of range (document has {} pages); using page 0",
                    q.qa_id,
                    doc_pages.len()
                ));
                0
            }
            None => {
                selection.warnings.push(format!(
                    "qa `{}`: no page in endpoint reply; using page 0",
                    q.qa_id
                ));
                0
            }
        };
        selection.assignments.push((q.qa_id.clone(), page));
    }
    for w in &selection.warnings {
        warn!("{w}");
    }
    Ok(selection)
}

/// Moves each QA onto the page record named by the selection, updating
/// `page_index`. `doc_pages` must be in page order.
pub fn apply_page_selection(doc_pages: &mut [CanonicalRecord], selection: &PageSelection) {
    let target: HashMap<&str, u32> = selection
        .assignments
        .iter()
        .map(|(id, p)| (id.as_str(), *p))
        .collect();
    let mut moved: Vec<QaAnnotation> = Vec::new();
    for page in doc_pages.iter_mut() {
        moved.append(&mut page.qa);
    }
    for mut qa in moved {
        let page = target.get(qa.qa_id.as_str()).copied().unwrap_or(qa.page_index);
        let page = (page as usize).min(doc_pages.len().saturating_sub(1));
        qa.page_index = page as u32;
        if let Some(record) = doc_pages.get_mut(page) {
            record.qa.push(qa);
        }
    }
}

/// Document id of a DeepForm page record (`<doc>_p<n>`).
fn doc_of(record_id: &str) -> &str {
    match record_id.rsplit_once("_p") {
        Some((doc, n)) if !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()) => doc,
        _ => record_id,
    }
}

/// Runs page selection for every DeepForm document in `records`, whose
/// pages must be adjacent and in page order, as the adapter emits them.
/// Other records are left alone. Returns the collected warnings.
pub fn assign_deepform_pages(
    records: &mut [CanonicalRecord],
    endpoint: Option<&dyn Endpoint>,
    image_root: &Path,
) -> Result<Vec<String>> {
    let mut warnings = Vec::new();
    let mut start = 0;
    while start < records.len() {
        if records[start].dataset != super::Dataset::Deepform {
            start += 1;
            continue;
        }
        let doc = doc_of(&records[start].record_id).to_string();
        let mut end = start + 1;
        while end < records.len()
            && records[end].dataset == super::Dataset::Deepform
            && doc_of(&records[end].record_id) == doc
        {
            end += 1;
        }
        let pages = &mut records[start..end];
        let qa: Vec<QaAnnotation> = pages.iter().flat_map(|p| p.qa.clone()).collect();
        let selection = select_deepform_page(pages, &qa, endpoint, image_root)?;
        apply_page_selection(pages, &selection);
        warnings.extend(selection.warnings);
        start = end;
    }
    Ok(warnings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dataset, Split};
    use crate::endpoint::FnEndpoint;
    use crate::error::EndpointError;

    fn page(n: u32, dir: &Path) -> CanonicalRecord {
        let image = format!("{n}.png");
        image::RgbImage::new(4, 4).save(dir.join(&image)).unwrap();
        CanonicalRecord {
            record_id: format!("d_p{n}"),
            dataset: Dataset::Deepform,
            split: Split::Test,
            image_path: image,
            image_width: 4,
            image_height: 4,
            ocr_tokens: vec![],
            qa: vec![],
        }
    }

    fn qa(id: &str) -> QaAnnotation {
        QaAnnotation {
            qa_id: id.into(),
            question: format!("What is {id}?"),
            answer: "x".into(),
            page_index: 0,
        }
    }

    #[test]
    fn single_page_needs_no_call() {
        let dir = tempfile::tempdir().unwrap();
        let ep = FnEndpoint::new("m", |_: &ChatRequest| -> Result<String, EndpointError> {
            panic!("should not be called")
        });
        let sel = select_deepform_page(&[page(0, dir.path())], &[qa("a"), qa("b")], Some(&ep), dir.path())
            .unwrap();
        assert_eq!(sel.assignments, vec![("a".into(), 0), ("b".into(), 0)]);
        assert_eq!(ep.calls(), 0);
    }

    #[test]
    fn scripted_reply_parsed() {
        let dir = tempfile::tempdir().unwrap();
        let pages: Vec<_> = (0..3).map(|n| page(n, dir.path())).collect();
        let ep = FnEndpoint::new("m", |req: &ChatRequest| {
            assert_eq!(req.images.len(), 3);
            assert!(req.prompt.contains("Format: Q1:number"));
            assert!(req.prompt.contains("Q2: What is qa2?"));
            Ok("Q1:2\nQ2:1".to_string())
        });
        let sel = select_deepform_page(&pages, &[qa("qa1"), qa("qa2")], Some(&ep), dir.path())
            .unwrap();
        assert_eq!(sel.assignments, vec![("qa1".into(), 2), ("qa2".into(), 1)]);
        assert!(sel.warnings.is_empty());
    }

    #[test]
    fn garbage_maps_to_zero_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let pages: Vec<_> = (0..2).map(|n| page(n, dir.path())).collect();
        let ep = FnEndpoint::new("m", |_: &ChatRequest| Ok("I cannot tell.".to_string()));
        let sel = select_deepform_page(&pages, &[qa("qa1")], Some(&ep), dir.path()).unwrap();
        assert_eq!(sel.assignments, vec![("qa1".into(), 0)]);
        assert_eq!(sel.warnings.len(), 1);

        let ep = FnEndpoint::new("m", |_: &ChatRequest| Ok("Q1:7".to_string()));
        let sel = select_deepform_page(&pages, &[qa("qa1")], Some(&ep), dir.path()).unwrap();
        assert_eq!(sel.assignments, vec![("qa1".into(), 0)]);
        assert_eq!(sel.warnings.len(), 1);
    }

    #[test]
    fn endpoint_failure_propagates() {
        let dir = tempfile::tempdir().unwrap();
        let pages: Vec<_> = (0..2).map(|n| page(n, dir.path())).collect();
        let ep = FnEndpoint::new("m", |_: &ChatRequest| Err(EndpointError::Failure("down".into())));
        assert!(matches!(
            select_deepform_page(&pages, &[qa("qa1")], Some(&ep), dir.path()),
            Err(Error::Endpoint(_))
        ));
    }

    #[test]
    fn offline_mode_warns() {
        let dir = tempfile::tempdir().unwrap();
        let pages: Vec<_> = (0..2).map(|n| page(n, dir.path())).collect();
        let sel = select_deepform_page(&pages, &[qa("qa1")], None, dir.path()).unwrap();
        assert_eq!(sel.assignments, vec![("qa1".into(), 0)]);
        assert_eq!(sel.warnings.len(), 1);
    }

    #[test]
    fn apply_moves_qa() {
        let dir = tempfile::tempdir().unwrap();
        let mut pages: Vec<_> = (0..3).map(|n| page(n, dir.path())).collect();
        pages[0].qa = vec![qa("a"), qa("b")];
        let sel = PageSelection {
            assignments: vec![("a".into(), 2), ("b".into(), 0)],
            warnings: vec![],
        };
        apply_page_selection(&mut pages, &sel);
        assert_eq!(pages[0].qa.len(), 1);
        assert_eq!(pages[0].qa[0].qa_id, "b");
        assert_eq!(pages[2].qa[0].qa_id, "a");
        assert_eq!(pages[2].qa[0].page_index, 2);
    }

    #[test]
    fn corpus_assignment_groups_by_document() {
        let dir = tempfile::tempdir().unwrap();
        let mut records: Vec<_> = (0..2).map(|n| page(n, dir.path())).collect();
        records[0].qa = vec![qa("a"), qa("b")];
        let mut other = page(0, dir.path());
        other.record_id = "e_p0".into();
        other.qa = vec![qa("c")];
        records.push(other);
        let ep = FnEndpoint::new("m", |req: &ChatRequest| {
            assert_eq!(req.images.len(), 2);
            Ok("Q1:1\nQ2:0".to_string())
        });
        let warnings = assign_deepform_pages(&mut records, Some(&ep), dir.path()).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(ep.calls(), 1);
        assert_eq!(records[0].qa.iter().map(|q| &q.qa_id[..]).collect::<Vec<_>>(), ["b"]);
        assert_eq!(records[1].qa[0].qa_id, "a");
        assert_eq!(records[1].qa[0].page_index, 1);
        assert_eq!(records[2].qa[0].qa_id, "c");
        assert_eq!(doc_of("my_doc_p12"), "my_doc");
        assert_eq!(doc_of("plain"), "plain");
    }
}
