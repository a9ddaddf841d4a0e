//! Canonical page records and dataset ingestion.
//!
//! A canonical file holds one [`CanonicalRecord`] per line. Image paths in a
//! record are relative to the directory containing the canonical file.

mod adapters;
mod deepform;

use std::collections::HashSet;
use std::fmt;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

pub use adapters::{adapt_dataset, AdapterDescriptor, ADAPTERS};
pub use deepform::{
    apply_page_selection, assign_deepform_pages, page_selection_prompt, select_deepform_page,
    PageSelection,
};

/// Pixel rectangle, origin top-left. `x_max`/`y_max` are exclusive, so a box
/// may touch the image's right and bottom edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct BoundingBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BoundingBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self, String> {
        if x_min >= x_max || y_min >= y_max {
            return Err(format!(
                "degenerate box [{x_min},{y_min},{x_max},{y_max}]: need x_min < x_max and y_min < y_max"
            ));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.x_max <= width && self.y_max <= height
    }

    /// Smallest box covering both.
    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    pub fn as_array(&self) -> [u32; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl TryFrom<[u32; 4]> for BoundingBox {
    type Error = String;

    fn try_from(v: [u32; 4]) -> Result<Self, String> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [u32; 4] {
    fn from(b: BoundingBox) -> Self {
        b.as_array()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcrToken {
    pub token_id: u32,
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaAnnotation {
    pub qa_id: String,
    pub question: String,
    pub answer: String,
    pub page_index: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Docvqa,
    Dude,
    Deepform,
    Funsd,
    Chartqa,
    Custom,
}

impl Dataset {
    pub const ALL: [Dataset; 6] = [
        Dataset::Docvqa,
        Dataset::Dude,
        Dataset::Deepform,
        Dataset::Funsd,
        Dataset::Chartqa,
        Dataset::Custom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dataset::Docvqa => "docvqa",
            Dataset::Dude => "dude",
            Dataset::Deepform => "deepform",
            Dataset::Funsd => "funsd",
            Dataset::Chartqa => "chartqa",
            Dataset::Custom => "custom",
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Dataset::ALL
            .into_iter()
            .find(|d| d.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::UnknownDataset(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train or test)")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// One page image with its OCR tokens and QA annotations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalRecord {
    pub record_id: String,
    pub dataset: Dataset,
    pub split: Split,
    pub image_path: String,
    pub image_width: u32,
    pub image_height: u32,
    pub ocr_tokens: Vec<OcrToken>,
    pub qa: Vec<QaAnnotation>,
}

impl CanonicalRecord {
    /// Checks the per-record invariants.
    pub fn validate(&self) -> Result<(), String> {
        if self.record_id.is_empty() {
            return Err("empty record_id".into());
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err("image dimensions must be positive".into());
        }
        for (idx, tok) in self.ocr_tokens.iter().enumerate() {
            if tok.token_id as usize != idx {
                return Err(format!(
                    "token ids must be dense in reading order: position {idx} has id {}",
                    tok.token_id
                ));
            }
            if tok.text.trim().is_empty() {
                return Err(format!("token {idx} has empty text"));
            }
            if !tok.bbox.fits_within(self.image_width, self.image_height) {
                return Err(format!(
                    "token {idx} box {:?} exceeds the {}x{} image",
                    tok.bbox.as_array(),
                    self.image_width,
                    self.image_height
                ));
            }
        }
        for qa in &self.qa {
            if qa.question.trim().is_empty() || qa.answer.trim().is_empty() {
                return Err(format!("qa `{}` has an empty question or answer", qa.qa_id));
            }
        }
        Ok(())
    }

    /// Text of the given tokens in reading order, joined by single spaces.
    pub fn joined_text(&self, token_ids: &[u32]) -> String {
        let mut ids = token_ids.to_vec();
        ids.sort_unstable();
        ids.dedup();
        ids.iter()
            .filter_map(|id| self.ocr_tokens.get(*id as usize))
            .map(|t| t.text.trim())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn full_text(&self) -> String {
        self.ocr_tokens
            .iter()
            .map(|t| t.text.trim())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn resolve_image(&self, base_dir: &Path) -> PathBuf {
        base_dir.join(&self.image_path)
    }
}

/// Parses canonical JSON lines held in memory. Image references are not
/// checked.
pub fn parse_canonical_str(text: &str) -> Result<Vec<CanonicalRecord>> {
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: CanonicalRecord =
            serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
                line: idx + 1,
                reason: e.to_string(),
            })?;
        records.push(record);
        lines.push(idx + 1);
    }
    check_records(&records, &lines)?;
    Ok(records)
}

/// Reads a canonical file, rejecting it whole on the first bad line, and
/// checks that every image reference exists.
pub fn parse_canonical(path: &Path) -> Result<Vec<CanonicalRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records = parse_canonical_str(&text)?;
    let base = base_dir(path);
    for record in &records {
        let image = record.resolve_image(&base);
        if !image.is_file() {
            return Err(Error::MissingImage(image));
        }
    }
    Ok(records)
}

fn check_records(records: &[CanonicalRecord], lines: &[usize]) -> Result<()> {
    let mut record_ids = HashSet::new();
    let mut qa_ids = HashSet::new();
    for (record, &line) in records.iter().zip(lines) {
        record
            .validate()
            .map_err(|reason| Error::MalformedRecord { line, reason })?;
        if !record_ids.insert((record.dataset, record.split, record.record_id.as_str())) {
            return Err(Error::MalformedRecord {
                line,
                reason: format!("duplicate record_id `{}`", record.record_id),
            });
        }
        for qa in &record.qa {
            if !qa_ids.insert((record.dataset, record.split, qa.qa_id.as_str())) {
                return Err(Error::MalformedRecord {
                    line,
                    reason: format!("duplicate qa_id `{}`", qa.qa_id),
                });
            }
        }
    }
    Ok(())
}

pub fn emit_canonical(records: &[CanonicalRecord], path: &Path) -> Result<()> {
    jsonl::write(path, records)
}

/// Directory that relative paths inside a manifest file resolve against.
pub fn base_dir(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Expresses `target` relative to `base`. Both are made absolute first;
/// falls back to the absolute target when no relative form exists.
pub fn relative_path(target: &Path, base: &Path) -> PathBuf {
    let target = absolutize(target);
    let base = absolutize(base);
    let t: Vec<Component> = target.components().collect();
    let b: Vec<Component> = base.components().collect();
    let common = t.iter().zip(&b).take_while(|(x, y)| x == y).count();
    if common == 0 {
        return target;
    }
    let mut out = PathBuf::new();
    for _ in common..b.len() {
        out.push("..");
    }
    for c in &t[common..] {
        out.push(c.as_os_str());
    }
    out
}

fn absolutize(p: &Path) -> PathBuf {
    let abs = if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir()
            .map(|cwd| cwd.join(p))
            .unwrap_or_else(|_| p.to_path_buf())
    };
    // Lexical cleanup of `.` and `..` so prefixes line up.
    let mut out = PathBuf::new();
    for c in abs.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            other => out.push(other.as_os_str()),
        }
    }
    out
}

/// Numbered listing of question/answer pairs used by the annotation prompts.
pub(crate) fn qa_listing<'a>(items: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    items
        .into_iter()
        .enumerate()
        .map(|(i, (q, a))| format!("Q{n}: {q}\nA{n}: {a}", n = i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}
