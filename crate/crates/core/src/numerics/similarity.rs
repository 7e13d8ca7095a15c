//! Embedding similarity used by overlap dedup.

use crate::{CoreError, Result};

use super::tensor::Tensor;

/// Cosine similarity of two rank-1 tensors, accumulated in f64.
///
/// Errors on zero-norm input so a degenerate embedding cannot silently look
/// orthogonal to everything.
pub fn cosine_similarity(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.rank() != 1 || b.rank() != 1 || a.numel() != b.numel() {
        return Err(CoreError::shape(
            "cosine_similarity",
            "two rank-1 tensors of equal length",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    cosine_similarity_slices(a.data(), b.data())
}

pub(crate) fn cosine_similarity_slices(a: &[f32], b: &[f32]) -> Result<f64> {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(CoreError::ZeroNorm("cosine_similarity"));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vec1(v: Vec<f32>) -> Tensor {
        Tensor::from_vec(v)
    }

    #[test]
    fn self_similarity_is_one() {
        let a = vec1(vec![3.0, 4.0]);
        assert_eq!(cosine_similarity(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn orthogonal_is_zero() {
        let a = vec1(vec![1.0, 0.0]);
        let b = vec1(vec![0.0, 1.0]);
        assert_eq!(cosine_similarity(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn forty_five_degrees() {
        let a = vec1(vec![1.0, 1.0]);
        let b = vec1(vec![1.0, 0.0]);
        let got = cosine_similarity(&a, &b).unwrap();
        assert!((got - 0.70710678).abs() < 1e-7, "got {got}");
    }

    #[test]
    fn zero_norm_is_an_error() {
        let a = vec1(vec![0.0, 0.0]);
        let b = vec1(vec![1.0, 0.0]);
        assert!(cosine_similarity(&a, &b).is_err());
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let a = vec1(vec![1.0, 0.0, 0.0]);
        let b = vec1(vec![1.0, 0.0]);
        assert!(cosine_similarity(&a, &b).is_err());
    }

    proptest! {
        // cos(a, c*a) = sign(c) for any nonzero scaling.
        #[test]
        fn scaling_invariance(
            v in proptest::collection::vec(-100.0f32..100.0, 2..16),
            c in prop_oneof![0.01f32..50.0, -50.0f32..-0.01],
        ) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
            let a = vec1(v.clone());
            let scaled = vec1(v.iter().map(|x| x * c).collect());
            let got = cosine_similarity(&a, &scaled).unwrap();
            let want = if c > 0.0 { 1.0 } else { -1.0 };
            prop_assert!((got - want).abs() < 1e-5, "c={c} got={got}");
        }

        #[test]
        fn always_within_unit_interval(
            a in proptest::collection::vec(-10.0f32..10.0, 4),
            b in proptest::collection::vec(-10.0f32..10.0, 4),
        ) {
            prop_assume!(a.iter().any(|x| x.abs() > 1e-3));
            prop_assume!(b.iter().any(|x| x.abs() > 1e-3));
            let got = cosine_similarity(&vec1(a), &vec1(b)).unwrap();
            prop_assert!((-1.0..=1.0).contains(&got));
        }
    }
}
