//! Training records for link-token and connector fine-tuning.
//!
//! Every evaluation pair becomes four records: the augmented VQA query with
//! a link-wrapped answer, the red-box OCR query with the link-wrapped box
//! text, and a positive and a negative connector sample that check a
//! proposed answer against the boxed text.

mod links;
mod perturb;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{base_dir, relative_path};
use crate::endpoint::Endpoint;
use crate::error::{Error, Result};
use crate::jsonl;
use crate::pairgen::EvalPair;

pub use links::{
    augment_cognitive_query, parse_link_spans, wrap_link_tokens, LinkSpan, LINK_CLOSE,
    LINK_INSTRUCTION, LINK_OPEN,
};
pub use perturb::{
    parse_perturbation_reply, perturb_answer, perturb_answer_for, perturbation_prompt, CONFUSIONS,
};

pub const TEMP_Q_CONN: &str =
    "Question: {Q}\nProposed answer: {y}. Verify the proposed answer using the text in the red box.";
pub const TEMP_R_POS: &str = "The text in the red box is <CPLINK>{y_P}</CPLINK>. The proposed answer is consistent with it. Answer: <CPLINK>{y_C}</CPLINK>.";
pub const TEMP_R_NEG: &str = "The text in the red box is <CPLINK>{y_P}</CPLINK>. The proposed answer {y_neg} is incorrect. Answer: <CPLINK>{y_C}</CPLINK>.";

fn connector_query(question: &str, proposed: &str) -> String {
    TEMP_Q_CONN.replace("{Q}", question).replace("{y}", proposed)
}

fn check_payload(s: &str) -> Result<()> {
    wrap_link_tokens(s).map(|_| ())
}

pub fn make_connector_positive(question: &str, y_c: &str, y_p: &str) -> Result<(String, String)> {
    check_payload(y_c)?;
    check_payload(y_p)?;
    let response = TEMP_R_POS.replace("{y_P}", y_p).replace("{y_C}", y_c);
    Ok((connector_query(question, y_c), response))
}

pub fn make_connector_negative(
    question: &str,
    y_c: &str,
    y_p: &str,
    y_c_neg: &str,
) -> Result<(String, String)> {
    if y_c_neg == y_c {
        return Err(Error::NegEqualsPositive);
    }
    check_payload(y_c)?;
    check_payload(y_p)?;
    check_payload(y_c_neg)?;
    let response = TEMP_R_NEG
        .replace("{y_P}", y_p)
        .replace("{y_neg}", y_c_neg)
        .replace("{y_C}", y_c);
    Ok((connector_query(question, y_c_neg), response))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Cognitive,
    Perceptual,
    ConnectorPos,
    ConnectorNeg,
}

impl RecordKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::Cognitive => "cognitive",
            RecordKind::Perceptual => "perceptual",
            RecordKind::ConnectorPos => "connector_pos",
            RecordKind::ConnectorNeg => "connector_neg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FtRecord {
    pub record_kind: RecordKind,
    pub query: String,
    pub response: String,
    /// Relative to the training file's directory unless absolute.
    pub image: PathBuf,
    pub pair_id: String,
    /// All three generated wrong answers; the first is the one used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbations: Option<Vec<String>>,
}

/// Seed for one pair: the run seed mixed with the pair id.
fn pair_seed(seed: u64, pair_id: &str) -> u64 {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(pair_id.as_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// The four records for one pair. Image paths are returned as given.
pub fn records_for_pair(
    pair: &EvalPair,
    plain_image: PathBuf,
    boxed_image: PathBuf,
    seed: u64,
    endpoint: Option<&dyn Endpoint>,
) -> Result<[FtRecord; 4]> {
    let y_c = pair.ground_truth.as_str();
    let y_p = pair.box_text.as_str();
    let q = pair.cognitive_query.as_str();
    let variants = perturb_answer_for(q, y_c, pair_seed(seed, &pair.pair_id), endpoint)?;
    let (pos_q, pos_r) = make_connector_positive(q, y_c, y_p)?;
    let (neg_q, neg_r) = make_connector_negative(q, y_c, y_p, &variants[0])?;
    let record = |kind, query, response, image: &PathBuf| FtRecord {
        record_kind: kind,
        query,
        response,
        image: image.clone(),
        pair_id: pair.pair_id.clone(),
        perturbations: None,
    };
    let mut neg = record(RecordKind::ConnectorNeg, neg_q, neg_r, &boxed_image);
    neg.perturbations = Some(variants.to_vec());
    Ok([
        record(
            RecordKind::Cognitive,
            augment_cognitive_query(q)?,
            wrap_link_tokens(y_c)?,
            &plain_image,
        ),
        record(
            RecordKind::Perceptual,
            pair.perceptual_query.clone(),
            wrap_link_tokens(y_p)?,
            &boxed_image,
        ),
        record(RecordKind::ConnectorPos, pos_q, pos_r, &boxed_image),
        neg,
    ])
}

#[derive(Debug, Default)]
pub struct FtOutcome {
    pub records: Vec<FtRecord>,
    pub failures: Vec<(String, Error)>,
}

impl FtOutcome {
    pub fn kind_counts(&self) -> BTreeMap<RecordKind, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.record_kind).or_insert(0) += 1;
        }
        counts
    }
}

/// Writes four records per pair to `out`. Pair images resolve against
/// `manifest_dir` and are stored relative to `out`'s directory. Failing
/// pairs are reported and left out.
pub fn emit_training_set(
    pairs: &[EvalPair],
    manifest_dir: &Path,
    seed: u64,
    endpoint: Option<&dyn Endpoint>,
    out: &Path,
) -> Result<FtOutcome> {
    let out_dir = base_dir(out);
    let mut outcome = FtOutcome::default();
    for pair in pairs {
        let plain = relative_path(&pair.plain_image_path(manifest_dir), &out_dir);
        let boxed = relative_path(&pair.boxed_image_path(manifest_dir), &out_dir);
        match records_for_pair(pair, plain, boxed, seed, endpoint) {
            Ok(recs) => outcome.records.extend(recs),
            Err(err) => {
                warn!("pair `{}` left out of the training set: {err}", pair.pair_id);
                outcome.failures.push((pair.pair_id.clone(), err));
            }
        }
    }
    jsonl::write(out, &outcome.records)?;
    info!(
        "{} records for {} pairs written to {}",
        outcome.records.len(),
        pairs.len() - outcome.failures.len(),
        out.display()
    );
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{BoundingBox, Dataset};
    use crate::metrics::normalize;
    use crate::pairgen::{Locator, PERCEPTUAL_QUESTION};

    #[test]
    fn positive_spans_in_order() {
        let (q, r) = make_connector_positive("Who?", "A", "A ").unwrap();
        let spans = parse_link_spans(&r).unwrap();
        assert_eq!(spans.len(), 2);
        assert_eq!(normalize(&spans[0].text), normalize("A "));
        assert_eq!(normalize(&spans[1].text), "a");
        assert!(q.contains("Who?") && q.contains("A"));
    }

    #[test]
    fn negative_names_wrong_answer() {
        let (pq, _) = make_connector_positive("Who?", "Doral", "Doral Inc").unwrap();
        let (nq, nr) = make_connector_negative("Who?", "Doral", "Doral Inc", "DoraI").unwrap();
        let spans: Vec<_> = parse_link_spans(&nr).unwrap().into_iter().map(|s| s.text).collect();
        assert_eq!(spans, ["Doral Inc", "Doral"]);
        assert!(nr.contains("The proposed answer DoraI is incorrect."));
        assert_eq!(nq.replace("DoraI", "Doral"), pq);
        assert!(matches!(
            make_connector_negative("Who?", "Doral", "Doral", "Doral"),
            Err(Error::NegEqualsPositive)
        ));
    }

    fn pair(i: usize) -> EvalPair {
        EvalPair {
            pair_id: format!("docvqa-r{i}-q"),
            record_id: format!("r{i}"),
            dataset: Dataset::Docvqa,
            cognitive_query: "Which company?".into(),
            perceptual_query: PERCEPTUAL_QUESTION.into(),
            ground_truth: "Doral".into(),
            bbox: BoundingBox::new(0, 0, 5, 5).unwrap(),
            box_text: "Doral Inc".into(),
            plain_image: format!("../src/r{i}.png").into(),
            boxed_image: format!("images/r{i}.png").into(),
            locator: Locator::Exact,
        }
    }

    #[test]
    fn four_records_per_pair_with_images() {
        let dir = tempfile::tempdir().unwrap();
        let manifest_dir = dir.path().join("pairs");
        let out = dir.path().join("pairs/train.jsonl");
        let pairs: Vec<_> = (0..10).map(pair).collect();
        let res = emit_training_set(&pairs, &manifest_dir, 0, None, &out).unwrap();
        assert_eq!(res.records.len(), 40);
        assert!(res.kind_counts().values().all(|n| *n == 10));
        for r in &res.records {
            let idx = &r.pair_id[7..r.pair_id.len() - 2];
            let expected = match r.record_kind {
                RecordKind::Cognitive => format!("../src/{idx}.png"),
                _ => format!("images/{idx}.png"),
            };
            assert_eq!(r.image, PathBuf::from(expected));
            assert!(!parse_link_spans(&r.response).unwrap().is_empty());
        }
        let neg = res
            .records
            .iter()
            .find(|r| r.record_kind == RecordKind::ConnectorNeg)
            .unwrap();
        assert_eq!(neg.perturbations.as_ref().unwrap().len(), 3);
        let first = std::fs::read(&out).unwrap();
        emit_training_set(&pairs, &manifest_dir, 0, None, &out).unwrap();
        assert_eq!(first, std::fs::read(&out).unwrap());
    }

    #[test]
    fn bad_pair_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut bad = pair(1);
        bad.ground_truth = "<CPLINK>x".into();
        let res =
            emit_training_set(&[pair(0), bad], dir.path(), 0, None, &dir.path().join("t.jsonl"))
                .unwrap();
        assert_eq!(res.records.len(), 4);
        assert_eq!(res.failures.len(), 1);
    }

    #[test]
    fn pair_seeds_differ() {
        assert_ne!(pair_seed(0, "a"), pair_seed(0, "b"));
        assert_ne!(pair_seed(0, "a"), pair_seed(1, "a"));
        assert_eq!(pair_seed(5, "a"), pair_seed(5, "a"));
    }
}
