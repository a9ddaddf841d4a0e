use std::collections::HashMap;

use crate::scalar::Scalar;

use super::normalize;

/// ChartQA-style relaxed match. Numbers (after dropping `%` and `,`) match
/// within 5% of the target; a zero target demands an exact zero. Anything
/// non-numeric falls back to normalized equality.
pub fn relaxed_accuracy(response: &str, truth: &str) -> bool {
    match (parse_number(response), parse_number(truth)) {
        (Some(r), Some(t)) => {
            if t == 0.0 {
                r == 0.0
            } else {
                (r - t).abs() <= 0.05 * t.abs()
            }
        }
        _ => normalize(response) == normalize(truth),
    }
}

fn parse_number(s: &str) -> Option<f64> {
    let cleaned: String = s.chars().filter(|c| *c != '%' && *c != ',').collect();
    let cleaned = cleaned.trim();
    if cleaned.is_empty() {
        return None;
    }
    cleaned.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Micro-F1 over key/value pairs; a hit is an equal key whose values agree
/// after normalization.
pub fn field_f1<S: Scalar>(predictions: &[(String, String)], truths: &[(String, String)]) -> S {
    if predictions.is_empty() && truths.is_empty() {
        return S::one();
    }
    let truth_map: HashMap<&str, String> = truths
        .iter()
        .map(|(k, v)| (k.as_str(), normalize(v)))
        .collect();
    let hits = predictions
        .iter()
        .filter(|(k, v)| truth_map.get(k.as_str()) == Some(&normalize(v)))
        .count() as u64;
    // 2PR/(P+R) with P = h/|pred| and R = h/|truth| reduces to 2h/(|pred|+|truth|).
    S::from_ratio(2 * hits, (predictions.len() + truths.len()) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Exact;

    fn kv(items: &[(&str, &str)]) -> Vec<(String, String)> {
        items
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn relaxed_examples() {
        assert!(relaxed_accuracy("32.4", "32.4"));
        assert!(relaxed_accuracy("33.9", "32.4"));
        assert!(!relaxed_accuracy("34.1", "32.4"));
        assert!(relaxed_accuracy("32.4%", "32.4"));
        assert!(relaxed_accuracy("37,133", "37133"));
        assert!(relaxed_accuracy("0", "0"));
        assert!(!relaxed_accuracy("0.01", "0"));
        assert!(relaxed_accuracy("Technology ", "technology"));
        assert!(!relaxed_accuracy("Tech", "technology"));
        assert!(relaxed_accuracy("-10", "-10.4"));
    }

    #[test]
    fn f1_examples() {
        let truths = kv(&[("advertiser", "Smith for Senate"), ("gross_amount", "$1,200")]);
        assert_eq!(field_f1::<f64>(&truths, &truths), 1.0);

        let preds = kv(&[("advertiser", "smith  for senate"), ("gross_amount", "$1,300")]);
        assert_eq!(field_f1::<Exact>(&preds, &truths), Exact::new(1, 2));

        assert_eq!(field_f1::<f64>(&[], &truths), 0.0);
        assert_eq!(field_f1::<f64>(&[], &[]), 1.0);

        // precision 1/1, recall 1/2 -> 2/3
        let one = kv(&[("advertiser", "Smith for Senate")]);
        assert_eq!(field_f1::<Exact>(&one, &truths), Exact::new(2, 3));
    }

    #[test]
    fn f1_agrees_with_precision_recall_form() {
        let truths = kv(&[("a", "1"), ("b", "2"), ("c", "3")]);
        let preds = kv(&[("a", "1"), ("b", "9"), ("d", "3"), ("c", "3")]);
        let hits = 2.0;
        let p = hits / 4.0;
        let r = hits / 3.0;
        let expected = 2.0 * p * r / (p + r);
        let got: f64 = field_f1(&preds, &truths);
        assert!((got - expected).abs() < 1e-12);
    }
}
