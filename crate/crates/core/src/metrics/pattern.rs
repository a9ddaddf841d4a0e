//! Heuristic labelling of cognition/perception conflicts.
//!
//! Labels, checked in order:
//! 1. `Consistent` when the cognitive answer is contained in the perceptual one.
//! 2. `P3LimitedCognition` when the perceptual answer is close to the ground
//!    truth but the cognitive answer is not.
//! 3. `P1CharError` when the cognitive answer aligns to some substring of the
//!    perceptual answer with a small number of character-level edits.
//! 4. `P2CognitiveBias` when both answers are close to the ground truth yet
//!    still disagree.
//! 5. `Other` for everything else.
//!
//! Character-level edits are substitutions that keep word boundaries in
//! place plus insertion or deletion of punctuation and whitespace. Dropping
//! or adding a letter or digit turns one word into another ("tin" into "in"), which reads as a language-level
//! substitution rather than a recognition slip, so those edits do not count
//! toward the P1 budget.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{anls_similarity, delta_containment, normalize, ResponsePair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictPattern {
    Consistent,
    P1CharError,
    P2CognitiveBias,
    P3LimitedCognition,
    Other,
}

impl ConflictPattern {
    pub const ALL: [ConflictPattern; 5] = [
        ConflictPattern::Consistent,
        ConflictPattern::P1CharError,
        ConflictPattern::P2CognitiveBias,
        ConflictPattern::P3LimitedCognition,
        ConflictPattern::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConflictPattern::Consistent => "consistent",
            ConflictPattern::P1CharError => "p1_char_error",
            ConflictPattern::P2CognitiveBias => "p2_cognitive_bias",
            ConflictPattern::P3LimitedCognition => "p3_limited_cognition",
            ConflictPattern::Other => "other",
        }
    }
}

impl fmt::Display for ConflictPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternThresholds {
    /// Similarity to the ground truth that counts as "close".
    pub similarity: f64,
    /// P1 edit budget as a fraction of the cognitive answer's length.
    pub char_budget_ratio: f64,
}

impl Default for PatternThresholds {
    fn default() -> Self {
        Self {
            similarity: 0.5,
            char_budget_ratio: 0.2,
        }
    }
}

impl PatternThresholds {
    pub fn char_budget(&self, len: usize) -> usize {
        ((self.char_budget_ratio * len as f64).ceil() as usize).max(1)
    }
}

pub fn classify_pattern(pair: &ResponsePair, ground_truth: &str) -> ConflictPattern {
    classify_pattern_with(pair, ground_truth, &PatternThresholds::default())
}

pub fn classify_pattern_with(
    pair: &ResponsePair,
    ground_truth: &str,
    thresholds: &PatternThresholds,
) -> ConflictPattern {
    let y_c = &pair.cognitive_response;
    let y_p = &pair.perceptual_response;
    if delta_containment(y_c, y_p) {
        return ConflictPattern::Consistent;
    }
    let sim_c: f64 = anls_similarity(y_c, ground_truth);
    let sim_p: f64 = anls_similarity(y_p, ground_truth);
    if sim_p >= thresholds.similarity && sim_c < thresholds.similarity {
        return ConflictPattern::P3LimitedCognition;
    }
    let c: Vec<char> = normalize(y_c).chars().collect();
    let p: Vec<char> = normalize(y_p).chars().collect();
    let budget = thresholds.char_budget(c.len());
    let dist = char_error_distance(&c, &p, budget);
    if dist > 0 && dist <= budget {
        return ConflictPattern::P1CharError;
    }
    if sim_c >= thresholds.similarity && sim_p >= thresholds.similarity {
        return ConflictPattern::P2CognitiveBias;
    }
    ConflictPattern::Other
}

/// Cheapest alignment of all of `needle` against any substring of `hay`,
/// counting substitutions and punctuation/whitespace indels at cost 1.
/// Alphanumeric indels, and substitutions between whitespace and
/// non-whitespace, cost `budget + 1`, so any alignment that needs one is
/// reported as over budget.
pub(crate) fn char_error_distance(needle: &[char], hay: &[char], budget: usize) -> usize {
    let word_edit = budget + 1;
    let indel = |c: char| if c.is_alphanumeric() { word_edit } else { 1 };
    // Row for the empty needle prefix: free start anywhere in `hay`.
    let mut prev = vec![0usize; hay.len() + 1];
    let mut cur = vec![0usize; hay.len() + 1];
    for &nc in needle {
        cur[0] = prev[0].saturating_add(indel(nc));
        for (j, &hc) in hay.iter().enumerate() {
            let sub = prev[j].saturating_add(if nc == hc {
                0
            } else if nc.is_whitespace() != hc.is_whitespace() {
                word_edit
            } else {
                1
            });
            let del = prev[j + 1].saturating_add(indel(nc));
            let ins = cur[j].saturating_add(indel(hc));
            cur[j + 1] = sub.min(del).min(ins);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    // Free end anywhere in `hay`.
    prev.into_iter().min().unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(c: &str, p: &str) -> ResponsePair {
        ResponsePair::new("x", c, p)
    }

    #[test]
    fn consistent_when_contained() {
        assert_eq!(
            classify_pattern(&pair("Gross", "Total Gross"), "Total Gross"),
            ConflictPattern::Consistent
        );
    }

    #[test]
    fn one_char_substitution_is_p1() {
        assert_eq!(
            classify_pattern(&pair("Doraf", "Doral"), "Doral"),
            ConflictPattern::P1CharError
        );
        // Error on the perceptual side works the same way.
        assert_eq!(
            classify_pattern(&pair("Doral", "Doraf"), "Doral"),
            ConflictPattern::P1CharError
        );
    }

    #[test]
    fn word_change_is_p2() {
        let gt = "round tin packaging";
        assert_eq!(
            classify_pattern(&pair("round in packaging", gt), gt),
            ConflictPattern::P2CognitiveBias
        );
    }

    #[test]
    fn hallucinated_answer_is_p3() {
        assert_eq!(
            classify_pattern(&pair("March 3, 1999", "Doral"), "Doral"),
            ConflictPattern::P3LimitedCognition
        );
    }

    #[test]
    fn both_far_is_other() {
        assert_eq!(
            classify_pattern(&pair("zzzz", "yyyy"), "Doral"),
            ConflictPattern::Other
        );
    }

    #[test]
    fn punctuation_slip_is_p1() {
        // y_C "12.500" vs y_P "12,500": one substitution
        assert_eq!(
            classify_pattern(&pair("12.500", "$12,500"), "12,500"),
            ConflictPattern::P1CharError
        );
    }

    #[test]
    fn char_error_distance_aligns_to_substrings() {
        let c = |s: &str| s.chars().collect::<Vec<_>>();
        assert_eq!(char_error_distance(&c("doraf"), &c("the doral co"), 1), 1);
        assert_eq!(char_error_distance(&c("doral"), &c("the doral co"), 1), 0);
        assert_eq!(char_error_distance(&c("a-b"), &c("ab"), 1), 1);
        // alphanumeric drop exceeds any budget
        assert_eq!(char_error_distance(&c("in"), &c("tin"), 0), 0);
        assert!(
            char_error_distance(&c("round in packaging"), &c("round tin packaging"), 4) > 4
        );
    }

    #[test]
    fn budget_floor_and_ratio() {
        let t = PatternThresholds::default();
        assert_eq!(t.char_budget(0), 1);
        assert_eq!(t.char_budget(5), 1);
        assert_eq!(t.char_budget(6), 2);
        assert_eq!(t.char_budget(18), 4);
    }
}
