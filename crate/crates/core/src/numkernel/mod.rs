//! Dense numeric primitives shared by the rest of the crate.

mod matrix;
mod rng;

pub use matrix::{axpy, dot, norm2, sq_dist, Matrix};
pub use rng::RngStream;

use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

fn ensure_nonempty(v: &[f64], what: &str) -> Result<()> {
    if v.is_empty() {
        Err(Error::InvalidDimension(format!("{what}: empty input")))
    } else {
        Ok(())
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    ensure_nonempty(logits, "softmax")?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    Ok(out)
}

pub fn log_sum_exp(logits: &[f64]) -> Result<f64> {
    ensure_nonempty(logits, "log_sum_exp")?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln())
}

/// `-ln(max(probs[label], 1e-12))`.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs
        .get(label)
        .ok_or(Error::InvalidLabel { label, num_classes: probs.len() })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Index of the maximum; ties go to the lowest index.
pub fn argmax_low_tie(v: &[f64]) -> Result<usize> {
    ensure_nonempty(v, "argmax")?;
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Shannon entropy in nats; zero-probability terms contribute nothing.
pub fn entropy(probs: &[f64]) -> f64 {
    probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}

/// Squared Euclidean distances between every row of `a` and every row of `b`.
pub fn pairwise_sq_dists(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::InvalidDimension(format!(
            "pairwise distances between {}-d and {}-d vectors",
            a.cols(),
            b.cols()
        )));
    }
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for (i, ra) in a.iter_rows().enumerate() {
        let o = out.row_mut(i);
        for (j, rb) in b.iter_rows().enumerate() {
            o[j] = sq_dist(ra, rb);
        }
    }
    Ok(out)
}

/// Indices `0..scores.len()` ordered by descending score, ties by ascending index.
pub(crate) fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-12);
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] < 1e-300);
        assert!(matches!(softmax(&[]), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[1.0, 0.0], 0).unwrap(), 0.0);
        assert!((cross_entropy(&[0.5, 0.5], 1).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let clamped = cross_entropy(&[0.0, 1.0], 0).unwrap();
        assert!(clamped.is_finite());
        assert!((clamped - (-(1e-12f64).ln())).abs() < 1e-12);
        assert!(matches!(cross_entropy(&[0.5, 0.5], 2), Err(Error::InvalidLabel { .. })));
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax_low_tie(&[0.1, 0.9]).unwrap(), 1);
        assert_eq!(argmax_low_tie(&[0.5, 0.5]).unwrap(), 0);
        assert_eq!(argmax_low_tie(&[3.0, 1.0, 3.0]).unwrap(), 0);
        assert!(argmax_low_tie(&[]).is_err());
    }

    #[test]
    fn pairwise_examples() {
        let origin = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        assert_eq!(pairwise_sq_dists(&origin, &origin).unwrap().as_slice(), &[0.0]);
        let b = Matrix::from_rows(&[[3.0, 4.0]]).unwrap();
        assert_eq!(pairwise_sq_dists(&origin, &b).unwrap().as_slice(), &[25.0]);
        let a = Matrix::from_rows(&[[1.0]]).unwrap();
        let b = Matrix::from_rows(&[[1.0], [4.0]]).unwrap();
        assert_eq!(pairwise_sq_dists(&a, &b).unwrap().as_slice(), &[0.0, 9.0]);
        assert!(pairwise_sq_dists(&a, &origin).is_err());
    }

    #[test]
    fn pairwise_self_is_symmetric_with_zero_diagonal() {
        let mut rng = RngStream::new(11);
        let rows: Vec<Vec<f64>> =
            (0..6).map(|_| (0..5).map(|_| rng.standard_normal()).collect()).collect();
        let a = Matrix::from_rows(&rows).unwrap();
        let d = pairwise_sq_dists(&a, &a).unwrap();
        for i in 0..6 {
            assert_eq!(d.get(i, i), 0.0);
            for j in 0..6 {
                assert_eq!(d.get(i, j), d.get(j, i));
            }
        }
    }

    #[test]
    fn softmax_sums_to_one_on_many_inputs() {
        let mut rng = RngStream::new(5);
        for _ in 0..10_000 {
            let k = 1 + rng.index(12);
            let v: Vec<f64> = (0..k).map(|_| rng.uniform_range(-50.0, 50.0)).collect();
            let s: f64 = softmax(&v).unwrap().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(
            v in prop::collection::vec(-50.0f64..50.0, 1..10),
            c in -100.0f64..100.0,
        ) {
            let a = softmax(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let b = softmax(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn cross_entropy_matches_log_sum_exp(
            v in prop::collection::vec(-10.0f64..10.0, 2..10),
            pick in 0usize..10,
        ) {
            let y = pick % v.len();
            let ce = cross_entropy(&softmax(&v).unwrap(), y).unwrap();
            let lse = log_sum_exp(&v).unwrap() - v[y];
            prop_assert!((ce - lse).abs() < 1e-9);
        }
    }
}
