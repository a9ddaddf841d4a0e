use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{anls_similarity, normalize};

/// A model's two answers for one evaluation pair: `y_C` for the question on
/// the plain page, `y_P` for the red-box reading on the annotated page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponsePair {
    pub pair_id: String,
    pub cognitive_response: String,
    pub perceptual_response: String,
}

impl ResponsePair {
    pub fn new(
        pair_id: impl Into<String>,
        cognitive: impl Into<String>,
        perceptual: impl Into<String>,
    ) -> Self {
        Self {
            pair_id: pair_id.into(),
            cognitive_response: cognitive.into(),
            perceptual_response: perceptual.into(),
        }
    }

    pub fn delta(&self) -> bool {
        delta_containment(&self.cognitive_response, &self.perceptual_response)
    }
}

/// True when the normalized cognitive answer occurs contiguously inside the
/// normalized perceptual answer. An empty cognitive answer is never
/// contained.
pub fn delta_containment(cognitive: &str, perceptual: &str) -> bool {
    let c = normalize(cognitive);
    if c.is_empty() {
        warn!("empty cognitive response counted as inconsistent");
        return false;
    }
    normalize(perceptual).contains(&c)
}

/// Fraction of pairs whose cognitive answer is contained in the perceptual
/// answer.
pub fn cp_consistency<'a, S: Scalar>(
    pairs: impl IntoIterator<Item = &'a ResponsePair>,
) -> Result<S> {
    let (hits, total) = pairs.into_iter().fold((0u64, 0u64), |(h, n), p| {
        (h + u64::from(p.delta()), n + 1)
    });
    if total == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(S::from_ratio(hits, total))
}

/// Consistency over only those pairs where both answers reach similarity 0.5
/// against the ground truth. `None` when no pair survives the filter.
pub fn idealized_cp_consistency<'a, S: Scalar>(
    pairs: impl IntoIterator<Item = (&'a ResponsePair, &'a str)>,
) -> Option<S> {
    let kept: Vec<&ResponsePair> = pairs
        .into_iter()
        .filter(|(pair, truth)| passes_idealized_filter::<S>(pair, truth))
        .map(|(pair, _)| pair)
        .collect();
    cp_consistency(kept).ok()
}

pub(crate) fn passes_idealized_filter<S: Scalar>(pair: &ResponsePair, truth: &str) -> bool {
    anls_similarity::<S>(&pair.cognitive_response, truth) >= S::half()
        && anls_similarity::<S>(&pair.perceptual_response, truth) >= S::half()
}

/// Unweighted mean of per-dataset figures.
pub fn macro_average<S: Scalar>(values: &[S]) -> Result<S> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sum = values.iter().fold(S::zero(), |acc, v| acc + *v);
    Ok(sum / S::from_ratio(values.len() as u64, 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Exact;

    #[test]
    fn delta_examples() {
        assert!(!delta_containment("Doraf", "Doral"));
        assert!(delta_containment("Doral", "Doral"));
        assert!(delta_containment("gross", "Total Gross Amount"));
        assert!(!delta_containment("", "anything"));
        assert!(!delta_containment("   ", "anything"));
    }

    #[test]
    fn consistency_mean() {
        let pairs = vec![
            ResponsePair::new("1", "a", "a"),
            ResponsePair::new("2", "a", "b"),
            ResponsePair::new("3", "b", "abc"),
        ];
        assert_eq!(cp_consistency::<Exact>(&pairs).unwrap(), Exact::new(2, 3));
        assert_eq!(cp_consistency::<f64>(&pairs[..1]).unwrap(), 1.0);
        assert!(matches!(
            cp_consistency::<f64>(&[] as &[ResponsePair]),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn idealized_filter() {
        // y_C = GT' with similarity 0.6 against GT = y_P; y_C is not
        // contained in y_P, so the pair is included and inconsistent.
        let gt = "abcde";
        let y_c = "abxye"; // 2 edits / 5 -> 0.6
        assert_eq!(anls_similarity::<Exact>(y_c, gt), Exact::new(3, 5));
        let included = ResponsePair::new("p", y_c, gt);
        let value: Option<f64> = idealized_cp_consistency([(&included, gt)]);
        assert_eq!(value, Some(0.0));

        // similarity 0.4 on the cognitive side drops the pair entirely
        let excluded = ResponsePair::new("q", "abxyz", gt);
        let value: Option<f64> = idealized_cp_consistency([(&excluded, gt)]);
        assert_eq!(value, None);

        let both: Option<Exact> =
            idealized_cp_consistency([(&included, gt), (&excluded, gt)]);
        assert_eq!(both, Some(Exact::new(0, 1)));
    }

    #[test]
    fn macro_examples() {
        let gpt4o = [85.58, 67.84, 62.70, 78.76, 81.41];
        let avg: f64 = macro_average(&gpt4o).unwrap();
        assert!((avg - 75.26).abs() <= 0.005, "{avg}");
        assert_eq!(macro_average(&[42.0_f64]).unwrap(), 42.0);
        assert_eq!(macro_average(&[0.0_f64, 100.0]).unwrap(), 50.0);
        assert_eq!(
            macro_average(&[Exact::new(1, 3), Exact::new(2, 3)]).unwrap(),
            Exact::new(1, 2)
        );
        assert!(macro_average::<f64>(&[]).is_err());
    }
}
