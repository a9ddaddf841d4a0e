//! Aggregating responses into per-dataset scores and rendering them.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::harness::ResponseRecord;
use crate::metrics::{
    anls_score, classify_pattern, cp_consistency, field_f1, idealized_cp_consistency,
    macro_average, relaxed_accuracy, ConflictPattern, ResponsePair,
};
use crate::pairgen::EvalPair;
use crate::Real;

/// Score used for the cognitive task of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CognitiveMetric {
    Anls,
    F1,
    RelaxedAccuracy,
}

impl CognitiveMetric {
    pub fn for_dataset(dataset: Dataset) -> Self {
        match dataset {
            Dataset::Deepform => CognitiveMetric::F1,
            Dataset::Chartqa => CognitiveMetric::RelaxedAccuracy,
            Dataset::Docvqa | Dataset::Dude | Dataset::Funsd | Dataset::Custom => {
                CognitiveMetric::Anls
            }
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CognitiveMetric::Anls => "ANLS",
            CognitiveMetric::F1 => "F1",
            CognitiveMetric::RelaxedAccuracy => "Relaxed Acc.",
        }
    }
}

/// Figures for one dataset. Ratios are fractions in `[0, 1]`; `None` means
/// undefined (no answered pairs, or none passing the idealized filter).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub cp_consistency: Option<Real>,
    pub idealized_cp_consistency: Option<Real>,
    pub cognitive_metric: CognitiveMetric,
    pub cognitive_score: Option<Real>,
    pub perceptual_score: Option<Real>,
    pub n_pairs: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub cp_consistency: Option<Real>,
    pub idealized: Option<Real>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub per_dataset: BTreeMap<Dataset, DatasetMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: MacroMetrics,
    /// Label shares among inconsistent pairs. Empty when every pair is
    /// consistent.
    pub pattern_distribution: BTreeMap<ConflictPattern, Real>,
}

fn mean(values: impl IntoIterator<Item = Real>) -> Option<Real> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as Real)
}

fn macro_of(values: impl IntoIterator<Item = Option<Real>>) -> Option<Real> {
    let defined: Vec<Real> = values.into_iter().flatten().collect();
    macro_average(&defined).ok()
}

fn cognitive_score(metric: CognitiveMetric, answered: &[(&ResponsePair, &EvalPair)]) -> Option<Real> {
    if answered.is_empty() {
        return None;
    }
    match metric {
        CognitiveMetric::Anls => mean(answered.iter().map(|(r, p)| {
            anls_score::<Real>(&r.cognitive_response, &[&p.ground_truth]).unwrap_or(0.0)
        })),
        CognitiveMetric::F1 => {
            let preds: Vec<(String, String)> = answered
                .iter()
                .map(|(r, p)| (p.pair_id.clone(), r.cognitive_response.clone()))
                .collect();
            let truths: Vec<(String, String)> = answered
                .iter()
                .map(|(_, p)| (p.pair_id.clone(), p.ground_truth.clone()))
                .collect();
            Some(field_f1::<Real>(&preds, &truths))
        }
        CognitiveMetric::RelaxedAccuracy => mean(answered.iter().map(|(r, p)| {
            if relaxed_accuracy(&r.cognitive_response, &p.ground_truth) {
                1.0
            } else {
                0.0
            }
        })),
    }
}

/// Scores every answered pair, grouped by dataset. Failed records count
/// toward `n_failed` only.
/// Answered pairs with their pair, plus the failed count.
type Group<'a> = (Vec<(ResponsePair, &'a EvalPair)>, usize);

pub fn build_report(responses: &[ResponseRecord], pairs: &[EvalPair]) -> Result<MetricReport> {
    if responses.is_empty() {
        return Err(Error::EmptyInput);
    }
    let by_id: HashMap<&str, &EvalPair> = pairs.iter().map(|p| (p.pair_id.as_str(), p)).collect();
    let mut groups: BTreeMap<Dataset, Group> = BTreeMap::new();
    for rec in responses {
        let pair = by_id
            .get(rec.pair_id.as_str())
            .ok_or_else(|| Error::UnknownPairReference(rec.pair_id.clone()))?;
        let group = groups.entry(pair.dataset).or_default();
        if rec.is_ok() {
            group.0.push((rec.pair(), pair));
        } else {
            group.1 += 1;
        }
    }

    let mut per_dataset = BTreeMap::new();
    let mut pattern_counts: BTreeMap<ConflictPattern, usize> = BTreeMap::new();
    for (dataset, (answered, n_failed)) in &groups {
        let refs: Vec<(&ResponsePair, &EvalPair)> = answered.iter().map(|(r, p)| (r, *p)).collect();
        for (r, p) in &refs {
            let label = classify_pattern(r, &p.ground_truth);
            if label != ConflictPattern::Consistent {
                *pattern_counts.entry(label).or_default() += 1;
            }
        }
        let metric = CognitiveMetric::for_dataset(*dataset);
        per_dataset.insert(
            *dataset,
            DatasetMetrics {
                cp_consistency: cp_consistency::<Real>(refs.iter().map(|(r, _)| *r)).ok(),
                idealized_cp_consistency: idealized_cp_consistency::<Real>(
                    refs.iter().map(|(r, p)| (*r, p.ground_truth.as_str())),
                ),
                cognitive_metric: metric,
                cognitive_score: cognitive_score(metric, &refs),
                perceptual_score: mean(refs.iter().map(|(r, p)| {
                    anls_score::<Real>(&r.perceptual_response, &[&p.box_text]).unwrap_or(0.0)
                })),
                n_pairs: refs.len(),
                n_failed: *n_failed,
            },
        );
    }

    let inconsistent: usize = pattern_counts.values().sum();
    let pattern_distribution = pattern_counts
        .into_iter()
        .map(|(k, n)| (k, n as Real / inconsistent as Real))
        .collect();
    let macro_avg = MacroMetrics {
        cp_consistency: macro_of(per_dataset.values().map(|m: &DatasetMetrics| m.cp_consistency)),
        idealized: macro_of(per_dataset.values().map(|m| m.idealized_cp_consistency)),
    };
    Ok(MetricReport {
        model: None,
        per_dataset,
        macro_avg,
        pattern_distribution,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format `{other}` (expected json, csv or markdown)")),
        }
    }
}

pub const UNDEFINED: &str = "\u{2014}";

fn pct(v: Option<Real>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |v| format!("{:.2}", v * 100.0))
}

/// Main figure with the idealized one as a subscript.
fn cell(raw: Option<Real>, idealized: Option<Real>) -> String {
    format!("{}<sub>{}</sub>", pct(raw), pct(idealized))
}

fn display_name(d: Dataset) -> &'static str {
    match d {
        Dataset::Docvqa => "DocVQA",
        Dataset::Dude => "DUDE",
        Dataset::Deepform => "DeepForm",
        Dataset::Funsd => "FUNSD",
        Dataset::Chartqa => "ChartQA",
        Dataset::Custom => "Custom",
    }
}

fn csv_value(v: Option<Real>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn render_report(report: &MetricReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Markdown => render_markdown(report),
    }
}

fn render_csv(report: &MetricReport) -> String {
    let mut out = String::from("dataset,metric,value\n");
    for (d, m) in &report.per_dataset {
        let rows = [
            ("cp_consistency", csv_value(m.cp_consistency)),
            ("idealized_cp_consistency", csv_value(m.idealized_cp_consistency)),
            (
                match m.cognitive_metric {
                    CognitiveMetric::Anls => "cognitive_anls",
                    CognitiveMetric::F1 => "cognitive_f1",
                    CognitiveMetric::RelaxedAccuracy => "cognitive_relaxed_accuracy",
                },
                csv_value(m.cognitive_score),
            ),
            ("perceptual_anls", csv_value(m.perceptual_score)),
            ("n_pairs", m.n_pairs.to_string()),
            ("n_failed", m.n_failed.to_string()),
        ];
        for (metric, value) in rows {
            let _ = writeln!(out, "{d},{metric},{value}");
        }
    }
    let _ = writeln!(out, "macro,cp_consistency,{}", csv_value(report.macro_avg.cp_consistency));
    let _ = writeln!(out, "macro,idealized_cp_consistency,{}", csv_value(report.macro_avg.idealized));
    for (p, share) in &report.pattern_distribution {
        let _ = writeln!(out, "all,pattern_{p},{share}");
    }
    out
}

fn render_markdown(report: &MetricReport) -> String {
    let mut out = String::new();
    let model = report.model.as_deref().unwrap_or("model");
    let datasets: Vec<Dataset> = report.per_dataset.keys().copied().collect();

    out.push_str("## C&P consistency\n\n");
    out.push_str("Main figure: consistency (%). Subscript: idealized consistency.\n\n");
    let _ = write!(out, "| Model |");
    for d in &datasets {
        let _ = write!(out, " {} |", display_name(*d));
    }
    out.push_str(" Average |\n|---|");
    out.push_str(&"---:|".repeat(datasets.len() + 1));
    let _ = write!(out, "\n| {model} |");
    for m in report.per_dataset.values() {
        let _ = write!(out, " {} |", cell(m.cp_consistency, m.idealized_cp_consistency));
    }
    let _ = writeln!(
        out,
        " {} |",
        cell(report.macro_avg.cp_consistency, report.macro_avg.idealized)
    );

    out.push_str("\n## Per dataset\n\n");
    out.push_str("| Dataset | Consistency | Idealized | Cognitive | Perceptual (ANLS) | Pairs | Failed |\n");
    out.push_str("|---|---:|---:|---:|---:|---:|---:|\n");
    for (d, m) in &report.per_dataset {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} ({}) | {} | {} | {} |",
            display_name(*d),
            pct(m.cp_consistency),
            pct(m.idealized_cp_consistency),
            pct(m.cognitive_score),
            m.cognitive_metric.label(),
            pct(m.perceptual_score),
            m.n_pairs,
            m.n_failed
        );
    }
    let (pairs, failed) = report
        .per_dataset
        .values()
        .fold((0, 0), |(p, f), m| (p + m.n_pairs, f + m.n_failed));
    let _ = writeln!(
        out,
        "| Average | {} | {} | | | {pairs} | {failed} |",
        pct(report.macro_avg.cp_consistency),
        pct(report.macro_avg.idealized)
    );

    if !report.pattern_distribution.is_empty() {
        out.push_str("\n## Conflict patterns\n\n| Pattern | Share (%) |\n|---|---:|\n");
        for (p, share) in &report.pattern_distribution {
            let _ = writeln!(out, "| {p} | {:.2} |", share * 100.0);
        }
    }
    out
}
