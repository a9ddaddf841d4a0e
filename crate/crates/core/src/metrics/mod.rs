//! String metrics and consistency scores.
//!
//! All comparisons go through [`normalize`]. Functions returning a ratio are
//! generic over [`Scalar`](crate::Scalar), so the same code yields `f64`
//! report values or exact rationals.

mod consistency;
mod edit;
mod normalize;
mod pattern;
mod score;

pub use consistency::{
    cp_consistency, delta_containment, idealized_cp_consistency, macro_average, ResponsePair,
};
#[allow(unused_imports)]
pub(crate) use consistency::passes_idealized_filter;
pub use edit::{anls_score, anls_similarity, levenshtein};
pub use normalize::normalize;
pub use pattern::{classify_pattern, classify_pattern_with, ConflictPattern, PatternThresholds};
pub use score::{field_f1, relaxed_accuracy};
