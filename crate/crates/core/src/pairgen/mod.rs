//! Cognitive/perceptual query pairs.
//!
//! Each kept QA yields a VQA query over the plain page and an OCR query over
//! a copy of the page with a red outline around the answer's tokens.

mod filter;
mod locate;
mod render;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::corpus::{relative_path, BoundingBox, CanonicalRecord, Dataset};
use crate::endpoint::Endpoint;
use crate::error::{Error, Result};
use crate::jsonl;

pub use filter::{filter_extractive, filter_prompt, is_extractive_local, parse_filter_reply};
pub use locate::{
    locate_box, locate_box_llm, locate_box_with, locate_prompt, merged_box, parse_locate_reply,
    Confidence, LocateOptions, Locator, LocatorResult,
};
pub use render::{
    draw_red_box, encode_png, load_rgb, render_visual_prompt, stroke_width, Outline, RED,
};

pub const PERCEPTUAL_QUESTION: &str = "What is the text within the red box?";

pub const MANIFEST_FILE: &str = "pairs.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPair {
    pub pair_id: String,
    pub record_id: String,
    pub dataset: Dataset,
    pub cognitive_query: String,
    pub perceptual_query: String,
    pub ground_truth: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    /// OCR text of the boxed tokens.
    pub box_text: String,
    /// Relative to the manifest's directory unless absolute.
    pub plain_image: PathBuf,
    pub boxed_image: PathBuf,
    pub locator: Locator,
}

impl EvalPair {
    pub fn plain_image_path(&self, manifest_dir: &Path) -> PathBuf {
        manifest_dir.join(&self.plain_image)
    }

    pub fn boxed_image_path(&self, manifest_dir: &Path) -> PathBuf {
        manifest_dir.join(&self.boxed_image)
    }
}

pub fn read_pairs(path: &Path) -> Result<Vec<EvalPair>> {
    jsonl::read(path)
}

pub fn write_pairs(path: &Path, pairs: &[EvalPair]) -> Result<()> {
    jsonl::write(path, pairs)
}

#[derive(Debug, Clone, Default)]
pub struct BuildOptions {
    pub locate: LocateOptions,
}

/// Pair and image counts for one dataset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PairCounts {
    pub pairs: usize,
    pub images: usize,
}

#[derive(Debug, Default)]
pub struct BuildOutcome {
    pub pairs: Vec<EvalPair>,
    /// Records or pairs that could not be processed, with the reason.
    pub failures: Vec<(String, Error)>,
    /// QA dropped as non-extractive.
    pub non_extractive: usize,
    /// Extractive QA without a unique box.
    pub unlocated: usize,
    pub manifest: PathBuf,
}

impl BuildOutcome {
    pub fn counts(&self) -> BTreeMap<Dataset, PairCounts> {
        let mut images: BTreeMap<Dataset, HashSet<&Path>> = BTreeMap::new();
        let mut out: BTreeMap<Dataset, PairCounts> = BTreeMap::new();
        for p in &self.pairs {
            out.entry(p.dataset).or_default().pairs += 1;
            images.entry(p.dataset).or_default().insert(&p.plain_image);
        }
        for (ds, set) in images {
            out.entry(ds).or_default().images = set.len();
        }
        out
    }
}

/// File-name-safe form of a pair id.
fn file_stem(pair_id: &str) -> String {
    pair_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Runs filtering, box location and rendering over `records`, writes the
/// boxed images under `out_dir/images/` and the manifest to
/// `out_dir/pairs.jsonl`. Relative image paths in `records` resolve against
/// `image_root`. A failing record or pair is logged and skipped.
pub fn build_eval_pairs(
    records: &[CanonicalRecord],
    image_root: &Path,
    endpoint: Option<&dyn Endpoint>,
    out_dir: &Path,
    opts: &BuildOptions,
) -> Result<BuildOutcome> {
    std::fs::create_dir_all(out_dir.join("images")).map_err(|e| Error::io(out_dir, e))?;
    let mut outcome = BuildOutcome {
        manifest: out_dir.join(MANIFEST_FILE),
        ..Default::default()
    };
    let mut stems = HashSet::new();
    for record in records {
        if record.qa.is_empty() {
            continue;
        }
        if let Err(err) = pairs_for_record(
            record,
            image_root,
            endpoint,
            out_dir,
            opts,
            &mut stems,
            &mut outcome,
        ) {
            warn!("record `{}` skipped: {err}", record.record_id);
            outcome.failures.push((record.record_id.clone(), err));
        }
    }
    write_pairs(&outcome.manifest, &outcome.pairs)?;
    info!(
        "{} pairs written to {} ({} non-extractive, {} without a unique box, {} failures)",
        outcome.pairs.len(),
        outcome.manifest.display(),
        outcome.non_extractive,
        outcome.unlocated,
        outcome.failures.len()
    );
    Ok(outcome)
}

fn pairs_for_record(
    record: &CanonicalRecord,
    image_root: &Path,
    endpoint: Option<&dyn Endpoint>,
    out_dir: &Path,
    opts: &BuildOptions,
    stems: &mut HashSet<String>,
    outcome: &mut BuildOutcome,
) -> Result<()> {
    let plain_path = record.resolve_image(image_root);
    let plain = load_rgb(&plain_path)?;
    let plain_rel = relative_path(&plain_path, out_dir);
    let verdicts = filter_extractive(record, endpoint, image_root)?;

    for (qa, (_, keep)) in record.qa.iter().zip(verdicts) {
        if !keep {
            outcome.non_extractive += 1;
            continue;
        }
        let mut found = locate_box_with(record, &qa.answer, opts.locate);
        if found.confidence != Confidence::Unique {
            if let Some(ep) = endpoint {
                found = locate_box_llm(record, qa, &found.candidates, ep, image_root)?;
            }
        }
        let (Confidence::Unique, Some(bbox)) = (found.confidence, found.merged_box) else {
            debug!(
                "qa `{}` in `{}`: no unique box ({:?})",
                qa.qa_id, record.record_id, found.confidence
            );
            outcome.unlocated += 1;
            continue;
        };

        let pair_id = format!("{}-{}-{}", record.dataset, record.record_id, qa.qa_id);
        let mut stem = file_stem(&pair_id);
        let mut n = 1;
        while !stems.insert(stem.clone()) {
            n += 1;
            stem = format!("{}-{n}", file_stem(&pair_id));
        }
        let boxed_rel = PathBuf::from("images").join(format!("{stem}.png"));
        let mut boxed = plain.clone();
        let rendered = draw_red_box(&mut boxed, &bbox)
            .and_then(|_| encode_png(&boxed))
            .and_then(|bytes| {
                let path = out_dir.join(&boxed_rel);
                std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
            });
        if let Err(err) = rendered {
            warn!("pair `{pair_id}` skipped: {err}");
            outcome.failures.push((pair_id, err));
            continue;
        }
        outcome.pairs.push(EvalPair {
            pair_id,
            record_id: record.record_id.clone(),
            dataset: record.dataset,
            cognitive_query: qa.question.clone(),
            perceptual_query: PERCEPTUAL_QUESTION.to_string(),
            ground_truth: qa.answer.clone(),
            bbox,
            box_text: found.merged_text,
            plain_image: plain_rel.clone(),
            boxed_image: boxed_rel,
            locator: found.locator,
        });
    }
    Ok(())
}
