use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::normalize;

/// Unit-cost Levenshtein distance over Unicode scalar values.
///
/// Callers that want the metric semantics pass normalized strings; this
/// function compares exactly what it is given.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

pub(crate) fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Normalized Levenshtein similarity: `1 - lev / max_len` over normalized
/// strings. Two empty strings are identical (1); one empty string scores 0.
pub fn anls_similarity<S: Scalar>(a: &str, b: &str) -> S {
    let a: Vec<char> = normalize(a).chars().collect();
    let b: Vec<char> = normalize(b).chars().collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return S::one();
    }
    let dist = levenshtein_chars(&a, &b);
    S::one() - S::from_ratio(dist as u64, longest as u64)
}

/// Task-level ANLS for one question: best similarity against any accepted
/// answer, with similarities under 0.5 counted as a complete miss.
pub fn anls_score<S: Scalar>(response: &str, truths: &[impl AsRef<str>]) -> Result<S> {
    if truths.is_empty() {
        return Err(Error::EmptyTruths);
    }
    let mut best = S::zero();
    for truth in truths {
        let sim: S = anls_similarity(response, truth.as_ref());
        let score = if sim >= S::half() { sim } else { S::zero() };
        if score > best {
            best = score;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Exact;

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein("doral", "doraf"), 1);
        assert_eq!(levenshtein("kitten", "kitten"), 0);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("abc", ""), 3);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("ü", "u"), 1);
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(anls_similarity::<f64>("Doral", "Doraf"), 0.8);
        assert_eq!(anls_similarity::<Exact>("Doral", "Doraf"), Exact::new(4, 5));
        assert_eq!(anls_similarity::<f64>("same", "same"), 1.0);
        assert_eq!(anls_similarity::<f64>("abc", "xyz"), 0.0);
        assert_eq!(anls_similarity::<f64>("", ""), 1.0);
        assert_eq!(anls_similarity::<f64>("", "a"), 0.0);
        assert_eq!(anls_similarity::<f64>("  A B ", "a b"), 1.0);
    }

    #[test]
    fn score_thresholding() {
        // 0.8 passes through unchanged.
        assert_eq!(anls_score::<f64>("Doraf", &["Doral"]).unwrap(), 0.8);
        // "abcde" vs "abxyz": 3 edits over 5 chars gives 0.4, below the cut.
        assert_eq!(anls_similarity::<Exact>("abcde", "abxyz"), Exact::new(2, 5));
        assert_eq!(anls_score::<f64>("abcde", &["abxyz"]).unwrap(), 0.0);
        assert_eq!(anls_score::<f64>("x", &["x", "y"]).unwrap(), 1.0);
        assert_eq!(anls_score::<f64>("ab", &["ax"]).unwrap(), 0.5);
        assert!(matches!(
            anls_score::<f64>("x", &[] as &[&str]),
            Err(Error::EmptyTruths)
        ));
    }
}
