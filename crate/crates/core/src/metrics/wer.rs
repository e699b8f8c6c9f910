//! Word error rate.

use crate::error::{Error, Result};

/// Levenshtein distance between two token sequences.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance between word sequences divided by the reference length.
pub fn wer<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Metric("word error rate needs a non-empty reference".into()));
    }
    let r: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let h: Vec<&str> = hypothesis.iter().map(AsRef::as_ref).collect();
    Ok(edit_distance(&r, &h) as f64 / r.len() as f64)
}

/// Splits a transcript line into lowercase words.
pub fn words(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_lowercase).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const REF: [&str; 6] = ["bin", "blue", "at", "f", "two", "now"];

    #[test]
    fn hand_cases() {
        assert_eq!(wer(&REF, &REF).unwrap(), 0.0);
        let sub = ["bin", "blue", "at", "f", "two", "soon"];
        assert!((wer(&REF, &sub).unwrap() - 1.0 / 6.0).abs() < 1e-12);
        let empty: [&str; 0] = [];
        assert_eq!(wer(&REF, &empty).unwrap(), 1.0);
        assert!(wer(&empty, &REF).is_err());
        let ins = ["bin", "blue", "at", "f", "two", "now", "please"];
        assert!((wer(&REF, &ins).unwrap() - 1.0 / 6.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn edit_distance_is_a_metric(
            a in proptest::collection::vec(0u8..4, 0..8),
            b in proptest::collection::vec(0u8..4, 0..8),
            c in proptest::collection::vec(0u8..4, 0..8),
        ) {
            prop_assert_eq!(edit_distance(&a, &a), 0);
            prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
            prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
        }
    }
}
