//! Per-dataset source readers. The directory layout each adapter expects is
//! documented in `docs/adapters.md`.
//!
//! Image paths in adapter output are relative to the source root; callers
//! writing a canonical file elsewhere rebase them.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Deserialize;
use serde_json::Value;

use super::{
    parse_canonical, BoundingBox, CanonicalRecord, Dataset, OcrToken, QaAnnotation, Split,
};
use crate::error::{Error, Result};

pub const ADAPTERS: [&str; 6] = ["docvqa", "dude", "deepform", "funsd", "chartqa", "custom"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdapterDescriptor {
    pub adapter: String,
    pub source: PathBuf,
    pub split: Split,
}

impl AdapterDescriptor {
    pub fn new(adapter: impl Into<String>, source: impl Into<PathBuf>, split: Split) -> Self {
        Self {
            adapter: adapter.into(),
            source: source.into(),
            split,
        }
    }
}

pub fn adapt_dataset(descriptor: &AdapterDescriptor) -> Result<Vec<CanonicalRecord>> {
    let src = descriptor.source.as_path();
    if !src.is_dir() {
        if ADAPTERS.contains(&descriptor.adapter.as_str()) {
            return Err(Error::SourceLayoutMismatch(format!(
                "{} is not a directory",
                src.display()
            )));
        }
        return Err(Error::UnknownAdapter(descriptor.adapter.clone()));
    }
    let split = descriptor.split;
    let records = match descriptor.adapter.as_str() {
        "docvqa" => docvqa(src, split)?,
        "dude" => dude(src, split)?,
        "deepform" => deepform(src, split)?,
        "funsd" => funsd(src, split)?,
        "chartqa" => chartqa(src, split)?,
        "custom" => custom(src)?,
        other => return Err(Error::UnknownAdapter(other.to_string())),
    };
    for (idx, record) in records.iter().enumerate() {
        record.validate().map_err(|reason| Error::MalformedRecord {
            line: idx + 1,
            reason: format!("adapter produced invalid record `{}`: {reason}", record.record_id),
        })?;
    }
    info!(
        "{} adapter: {} records, {} qa",
        descriptor.adapter,
        records.len(),
        records.iter().map(|r| r.qa.len()).sum::<usize>()
    );
    Ok(records)
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::SourceLayoutMismatch(format!(
            "expected file {}",
            path.display()
        )))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    require_file(path)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::SourceLayoutMismatch(format!("{}: {e}", path.display())))
}

fn image_dims(path: &Path) -> Result<(u32, u32)> {
    if !path.is_file() {
        return Err(Error::MissingImage(path.to_path_buf()));
    }
    image::image_dimensions(path).map_err(|e| Error::ImageDecodeFailure {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn rel(path: &Path) -> String {
    path.to_string_lossy().replace('\\', "/")
}

fn file_stem(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string())
}

/// Integer box covering the given float coordinates, clamped to the image.
/// Returns `None` when nothing of the box is left inside.
fn clamp_box(xs: &[f64], ys: &[f64], width: u32, height: u32) -> Option<BoundingBox> {
    let fold = |v: &[f64]| {
        v.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                (lo.min(*x), hi.max(*x))
            })
    };
    let (x0, x1) = fold(xs);
    let (y0, y1) = fold(ys);
    if !(x0.is_finite() && x1.is_finite() && y0.is_finite() && y1.is_finite()) {
        return None;
    }
    if x0 >= width as f64 || y0 >= height as f64 || x1 <= 0.0 || y1 <= 0.0 {
        return None;
    }
    let clamp = |v: f64, hi: u32| v.max(0.0).min(hi as f64);
    let mut x_min = clamp(x0.floor(), width) as u32;
    let mut y_min = clamp(y0.floor(), height) as u32;
    let x_max = clamp(x1.ceil(), width) as u32;
    let y_max = clamp(y1.ceil(), height) as u32;
    // Zero-extent boxes (a hairline rule, or a point) get one pixel.
    if x_min == x_max && x_max > 0 {
        x_min -= 1;
    }
    if y_min == y_max && y_max > 0 {
        y_min -= 1;
    }
    BoundingBox::new(x_min, y_min, x_max, y_max).ok()
}

/// Builds densely numbered tokens from (text, xs, ys) triples in source
/// order, dropping blank text and boxes that fall outside the page.
fn build_tokens(
    raw: impl IntoIterator<Item = (String, Vec<f64>, Vec<f64>)>,
    width: u32,
    height: u32,
    origin: &str,
) -> Vec<OcrToken> {
    let mut tokens = Vec::new();
    let mut dropped = 0usize;
    for (text, xs, ys) in raw {
        let text = text.trim().to_string();
        match clamp_box(&xs, &ys, width, height) {
            Some(bbox) if !text.is_empty() => tokens.push(OcrToken {
                token_id: tokens.len() as u32,
                text,
                bbox,
            }),
            _ => dropped += 1,
        }
    }
    if dropped > 0 {
        warn!("{origin}: dropped {dropped} blank or off-page OCR tokens");
    }
    tokens
}

/// Microsoft Read-API style OCR used by DocVQA and DUDE: word polygons as
/// eight numbers.
#[derive(Deserialize)]
struct ReadApiOcr {
    #[serde(rename = "recognitionResults")]
    recognition_results: Vec<ReadApiPage>,
}

#[derive(Deserialize)]
struct ReadApiPage {
    #[serde(default)]
    lines: Vec<ReadApiLine>,
}

#[derive(Deserialize)]
struct ReadApiLine {
    #[serde(default)]
    words: Vec<ReadApiWord>,
}

#[derive(Deserialize)]
struct ReadApiWord {
    #[serde(rename = "boundingBox")]
    bounding_box: Vec<f64>,
    text: String,
}

fn read_api_tokens(path: &Path, width: u32, height: u32) -> Result<Vec<OcrToken>> {
    let ocr: ReadApiOcr = read_json(path)?;
    let words = ocr
        .recognition_results
        .into_iter()
        .flat_map(|p| p.lines)
        .flat_map(|l| l.words)
        .map(|w| {
            let xs = w.bounding_box.iter().step_by(2).copied().collect();
            let ys = w.bounding_box.iter().skip(1).step_by(2).copied().collect();
            (w.text, xs, ys)
        });
    Ok(build_tokens(words, width, height, &rel(path)))
}

/// Token file in the canonical token shape; ids are renumbered.
#[derive(Deserialize)]
struct LooseToken {
    text: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

fn canonical_token_file(path: &Path, width: u32, height: u32) -> Result<Vec<OcrToken>> {
    let raw: Vec<LooseToken> = read_json(path)?;
    let tokens = raw.into_iter().map(|t| {
        (
            t.text,
            vec![t.bbox[0], t.bbox[2]],
            vec![t.bbox[1], t.bbox[3]],
        )
    });
    Ok(build_tokens(tokens, width, height, &rel(path)))
}

fn id_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

#[derive(Deserialize)]
struct DocvqaFile {
    data: Vec<DocvqaItem>,
}

#[derive(Deserialize)]
struct DocvqaItem {
    #[serde(rename = "questionId")]
    question_id: Value,
    question: String,
    #[serde(default)]
    answers: Vec<String>,
    image: String,
}

fn docvqa(src: &Path, split: Split) -> Result<Vec<CanonicalRecord>> {
    let ann: DocvqaFile = read_json(&src.join("annotations.json"))?;
    // Group questions by image in first-appearance order.
    let mut order: Vec<String> = Vec::new();
    let mut by_image: BTreeMap<String, Vec<QaAnnotation>> = BTreeMap::new();
    for item in ann.data {
        let Some(answer) = item.answers.into_iter().find(|a| !a.trim().is_empty()) else {
            continue;
        };
        if item.question.trim().is_empty() {
            continue;
        }
        if !by_image.contains_key(&item.image) {
            order.push(item.image.clone());
        }
        by_image.entry(item.image).or_default().push(QaAnnotation {
            qa_id: id_string(&item.question_id),
            question: item.question,
            answer,
            page_index: 0,
        });
    }
    let mut records = Vec::new();
    for image in order {
        let stem = file_stem(&image);
        let (width, height) = image_dims(&src.join(&image))?;
        let ocr_tokens = read_api_tokens(&src.join("ocr").join(format!("{stem}.json")), width, height)?;
        records.push(CanonicalRecord {
            record_id: stem,
            dataset: Dataset::Docvqa,
            split,
            qa: by_image.remove(&image).unwrap_or_default(),
            image_path: image,
            image_width: width,
            image_height: height,
            ocr_tokens,
        });
    }
    Ok(records)
}

#[derive(Deserialize)]
struct DudeFile {
    data: Vec<DudeItem>,
}

#[derive(Deserialize)]
struct DudeItem {
    #[serde(rename = "questionId")]
    question_id: Value,
    question: String,
    #[serde(default)]
    answers: Vec<String>,
    #[serde(rename = "docId")]
    doc_id: String,
    #[serde(default)]
    answers_page_bounding_boxes: Vec<Vec<DudeBox>>,
}

#[derive(Deserialize)]
struct DudeBox {
    page: u32,
}

fn dude(src: &Path, split: Split) -> Result<Vec<CanonicalRecord>> {
    let ann: DudeFile = read_json(&src.join("annotations.json"))?;
    let mut pages: BTreeMap<(String, u32), Vec<QaAnnotation>> = BTreeMap::new();
    let mut dropped = 0usize;
    for item in ann.data {
        let page_set: HashSet<u32> = item
            .answers_page_bounding_boxes
            .iter()
            .flatten()
            .map(|b| b.page)
            .collect();
        let answer = item.answers.into_iter().find(|a| !a.trim().is_empty());
        let (Some(answer), true) = (answer, page_set.len() == 1) else {
            dropped += 1;
            continue;
        };
        let page = *page_set.iter().next().unwrap();
        pages
            .entry((item.doc_id, page))
            .or_default()
            .push(QaAnnotation {
                qa_id: id_string(&item.question_id),
                question: item.question,
                answer,
                page_index: page,
            });
    }
    if dropped > 0 {
        info!("dude: dropped {dropped} questions without a single-page answer location");
    }
    let mut records = Vec::new();
    for ((doc_id, page), qa) in pages {
        let name = format!("{doc_id}_{page}");
        let image = format!("images/{name}.png");
        let (width, height) = image_dims(&src.join(&image))?;
        let ocr_tokens = read_api_tokens(&src.join("ocr").join(format!("{name}.json")), width, height)?;
        records.push(CanonicalRecord {
            record_id: name,
            dataset: Dataset::Dude,
            split,
            image_path: image,
            image_width: width,
            image_height: height,
            ocr_tokens,
            qa,
        });
    }
    Ok(records)
}

#[derive(Deserialize)]
struct DeepformQa {
    qa_id: String,
    doc_id: String,
    question: String,
    answer: String,
}

/// One record per page. Every QA starts on page 0, the page the upstream
/// key/value conversion assumes; [`super::select_deepform_page`] moves
/// them afterwards.
fn deepform(src: &Path, split: Split) -> Result<Vec<CanonicalRecord>> {
    let qa_path = src.join("qa.jsonl");
    require_file(&qa_path)?;
    let qas: Vec<DeepformQa> = crate::jsonl::read(&qa_path)?;
    let mut docs: Vec<String> = Vec::new();
    let mut by_doc: BTreeMap<String, Vec<QaAnnotation>> = BTreeMap::new();
    for q in qas {
        if q.answer.trim().is_empty() || q.question.trim().is_empty() {
            continue;
        }
        if !by_doc.contains_key(&q.doc_id) {
            docs.push(q.doc_id.clone());
        }
        by_doc.entry(q.doc_id).or_default().push(QaAnnotation {
            qa_id: q.qa_id,
            question: q.question,
            answer: q.answer,
            page_index: 0,
        });
    }
    let mut records = Vec::new();
    for doc in docs {
        let dir = src.join("pages").join(&doc);
        let page_count = count_pages(&dir)?;
        let mut qa = by_doc.remove(&doc).unwrap_or_default();
        for page in 0..page_count {
            let image = format!("pages/{doc}/{page}.png");
            let (width, height) = image_dims(&src.join(&image))?;
            let ocr_tokens =
                canonical_token_file(&dir.join(format!("{page}.tokens.json")), width, height)?;
            records.push(CanonicalRecord {
                record_id: format!("{doc}_p{page}"),
                dataset: Dataset::Deepform,
                split,
                image_path: image,
                image_width: width,
                image_height: height,
                ocr_tokens,
                qa: if page == 0 { std::mem::take(&mut qa) } else { Vec::new() },
            });
        }
    }
    Ok(records)
}

fn count_pages(dir: &Path) -> Result<u32> {
    let mut n = 0;
    while dir.join(format!("{n}.png")).is_file() {
        n += 1;
    }
    if n == 0 {
        return Err(Error::SourceLayoutMismatch(format!(
            "no page images (0.png, 1.png, ...) under {}",
            dir.display()
        )));
    }
    Ok(n)
}

#[derive(Deserialize)]
struct FunsdFile {
    form: Vec<FunsdEntity>,
}

#[derive(Deserialize)]
struct FunsdEntity {
    id: u32,
    text: String,
    label: String,
    #[serde(default)]
    words: Vec<FunsdWord>,
    #[serde(default)]
    linking: Vec<[u32; 2]>,
}

#[derive(Deserialize)]
struct FunsdWord {
    text: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

/// Question/answer entity links become "What is the value of ...?" QA.
fn funsd(src: &Path, split: Split) -> Result<Vec<CanonicalRecord>> {
    let ann_dir = src.join("annotations");
    let mut names: Vec<PathBuf> = fs::read_dir(&ann_dir)
        .map_err(|_| {
            Error::SourceLayoutMismatch(format!("missing directory {}", ann_dir.display()))
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    names.sort();
    let mut records = Vec::new();
    for path in names {
        let stem = file_stem(&rel(&path));
        let form: FunsdFile = read_json(&path)?;
        let image = format!("images/{stem}.png");
        let (width, height) = image_dims(&src.join(&image))?;
        let words = form.form.iter().flat_map(|e| {
            e.words.iter().map(|w| {
                (
                    w.text.clone(),
                    vec![w.bbox[0], w.bbox[2]],
                    vec![w.bbox[1], w.bbox[3]],
                )
            })
        });
        let ocr_tokens = build_tokens(words, width, height, &rel(&path));

        let by_id: BTreeMap<u32, &FunsdEntity> = form.form.iter().map(|e| (e.id, e)).collect();
        let mut seen = HashSet::new();
        let mut qa = Vec::new();
        for entity in &form.form {
            for &[a, b] in &entity.linking {
                let (Some(ea), Some(eb)) = (by_id.get(&a), by_id.get(&b)) else {
                    continue;
                };
                let (q, ans) = match (ea.label.as_str(), eb.label.as_str()) {
                    ("question", "answer") => (*ea, *eb),
                    ("answer", "question") => (*eb, *ea),
                    _ => continue,
                };
                if !seen.insert((q.id, ans.id)) {
                    continue;
                }
                let key = q.text.trim().trim_end_matches(':').trim();
                let answer = ans.text.trim();
                if key.is_empty() || answer.is_empty() {
                    continue;
                }
                qa.push(QaAnnotation {
                    qa_id: format!("{stem}-{}-{}", q.id, ans.id),
                    question: format!("What is the value of \"{key}\"?"),
                    answer: answer.to_string(),
                    page_index: 0,
                });
            }
        }
        records.push(CanonicalRecord {
            record_id: stem,
            dataset: Dataset::Funsd,
            split,
            image_path: image,
            image_width: width,
            image_height: height,
            ocr_tokens,
            qa,
        });
    }
    if records.is_empty() {
        return Err(Error::SourceLayoutMismatch(format!(
            "no annotation files in {}",
            ann_dir.display()
        )));
    }
    Ok(records)
}

#[derive(Deserialize)]
struct ChartqaItem {
    imgname: String,
    query: String,
    label: Value,
}

fn chartqa(src: &Path, split: Split) -> Result<Vec<CanonicalRecord>> {
    let mut order: Vec<String> = Vec::new();
    let mut by_image: BTreeMap<String, Vec<QaAnnotation>> = BTreeMap::new();
    let mut found = false;
    for part in ["human", "augmented"] {
        let path = src.join(format!("{split}_{part}.json"));
        if !path.is_file() {
            continue;
        }
        found = true;
        let items: Vec<ChartqaItem> = read_json(&path)?;
        for (idx, item) in items.into_iter().enumerate() {
            let answer = id_string(&item.label);
            if answer.trim().is_empty() || item.query.trim().is_empty() {
                continue;
            }
            if !by_image.contains_key(&item.imgname) {
                order.push(item.imgname.clone());
            }
            by_image.entry(item.imgname).or_default().push(QaAnnotation {
                qa_id: format!("{part}-{idx}"),
                question: item.query,
                answer,
                page_index: 0,
            });
        }
    }
    if !found {
        return Err(Error::SourceLayoutMismatch(format!(
            "expected {split}_human.json or {split}_augmented.json in {}",
            src.display()
        )));
    }
    let mut records = Vec::new();
    for name in order {
        let image = format!("png/{name}");
        let (width, height) = image_dims(&src.join(&image))?;
        let stem = file_stem(&name);
        let ocr_tokens =
            canonical_token_file(&src.join("ocr").join(format!("{stem}.json")), width, height)?;
        records.push(CanonicalRecord {
            record_id: stem,
            dataset: Dataset::Chartqa,
            split,
            qa: by_image.remove(&name).unwrap_or_default(),
            image_path: image,
            image_width: width,
            image_height: height,
            ocr_tokens,
        });
    }
    Ok(records)
}

fn custom(src: &Path) -> Result<Vec<CanonicalRecord>> {
    let path = src.join("records.jsonl");
    require_file(&path)?;
    parse_canonical(&path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_box_handles_polygons_and_edges() {
        let b = clamp_box(&[1.2, 9.7, 9.7, 1.2], &[2.0, 2.0, 5.5, 5.5], 100, 100).unwrap();
        assert_eq!(b.as_array(), [1, 2, 10, 6]);
        let b = clamp_box(&[-3.0, 120.0], &[0.0, 4.0], 100, 100).unwrap();
        assert_eq!(b.as_array(), [0, 0, 100, 4]);
        let b = clamp_box(&[5.0, 5.0], &[3.0, 3.0], 100, 100).unwrap();
        assert_eq!(b.as_array(), [4, 2, 5, 3]);
        assert!(clamp_box(&[200.0, 300.0], &[1.0, 2.0], 100, 100).is_none());
    }

    #[test]
    fn unknown_adapter() {
        let dir = tempfile::tempdir().unwrap();
        let err = adapt_dataset(&AdapterDescriptor::new("infovqa", dir.path(), Split::Test))
            .unwrap_err();
        assert!(matches!(err, Error::UnknownAdapter(_)));
    }

    #[test]
    fn empty_source_is_layout_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        for name in ADAPTERS {
            let err = adapt_dataset(&AdapterDescriptor::new(name, dir.path(), Split::Test))
                .unwrap_err();
            assert!(matches!(err, Error::SourceLayoutMismatch(_)), "{name}: {err}");
        }
    }
}
