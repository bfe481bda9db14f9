//! Similarity and loss primitives with their analytic gradients.

use super::linalg::{check_len, dot, norm};
use crate::error::{Error, Result};

/// Tolerance for simplex membership of targets.
pub const SIMPLEX_TOL: f64 = 1e-9;

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len("cosine similarity", a.len(), b.len())?;
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("cosine similarity"));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity together with its gradient with respect to `a`.
pub fn cosine_similarity_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len("cosine similarity", a.len(), b.len())?;
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("cosine similarity"));
    }
    let raw = dot(a, b) / (na * nb);
    // d/da [a·b / (|a||b|)] = b / (|a||b|) - (a·b) a / (|a|^3 |b|)
    let grad = a
        .iter()
        .zip(b)
        .map(|(&ai, &bi)| bi / (na * nb) - raw * ai / (na * na))
        .collect();
    Ok((raw.clamp(-1.0, 1.0), grad))
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

pub fn check_simplex(q: &[f64]) -> Result<()> {
    let sum: f64 = q.iter().sum();
    let min = q.iter().copied().fold(f64::INFINITY, f64::min);
    if q.is_empty() || !sum.is_finite() || (sum - 1.0).abs() > SIMPLEX_TOL || min < -SIMPLEX_TOL {
        return Err(Error::NotSimplex { sum, min });
    }
    Ok(())
}

/// Cross entropy `-Σ q_k log softmax(z)_k` and its gradient `softmax(z) - q`.
pub fn cross_entropy(target: &[f64], logits: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len("cross entropy", logits.len(), target.len())?;
    check_simplex(target)?;
    let lse = log_sum_exp(logits);
    let loss = target
        .iter()
        .zip(logits)
        .filter(|(&q, _)| q != 0.0)
        .map(|(&q, &z)| -q * (z - lse))
        .sum();
    let grad = softmax(logits)
        .into_iter()
        .zip(target)
        .map(|(p, q)| p - q)
        .collect();
    Ok((loss, grad))
}

/// Mean squared error over the entries and its gradient with respect to `prediction`.
pub fn mse(prediction: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len("mean squared error", target.len(), prediction.len())?;
    let n = prediction.len() as f64;
    let loss = prediction
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n;
    let grad = prediction
        .iter()
        .zip(target)
        .map(|(p, t)| 2.0 * (p - t) / n)
        .collect();
    Ok((loss, grad))
}

pub fn one_hot(class: usize, classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; classes];
    v[class] = 1.0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert!((c - 10.0 / 14.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_rejects_zero_norm() {
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNorm(_))
        ));
    }

    #[test]
    fn uniform_softmax() {
        for p in softmax(&[0.0, 0.0, 0.0]) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_cross_entropy_is_ln2() {
        let (loss, grad) = cross_entropy(&[0.5, 0.5], &[0.0, 0.0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(grad.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn confident_correct_logits_give_vanishing_loss() {
        let (loss, _) = cross_entropy(&[1.0, 0.0], &[50.0, -50.0]).unwrap();
        assert!(loss < 1e-40);
    }

    #[test]
    fn non_simplex_target_rejected() {
        assert!(matches!(
            cross_entropy(&[0.7, 0.7], &[0.0, 0.0]),
            Err(Error::NotSimplex { .. })
        ));
        assert!(cross_entropy(&[1.5, -0.5], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let p = softmax(&[1000.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn softmax_on_simplex_and_shift_invariant(
            z in prop::collection::vec(-30.0f64..30.0, 1..10),
            shift in -100.0f64..100.0,
        ) {
            let p = softmax(&z);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
            for (a, b) in p.iter().zip(softmax(&shifted)) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in prop::collection::vec(-5.0f64..5.0, 2..8),
            b_seed in prop::collection::vec(-5.0f64..5.0, 8),
            lambda in 0.01f64..100.0,
            mu in 0.01f64..100.0,
        ) {
            let b = &b_seed[..a.len()];
            prop_assume!(norm(&a) > 1e-6 && norm(b) > 1e-6);
            let c = cosine_similarity(&a, b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&c));
            prop_assert!((c - cosine_similarity(b, &a).unwrap()).abs() < 1e-12);
            let la: Vec<f64> = a.iter().map(|v| v * lambda).collect();
            let mb: Vec<f64> = b.iter().map(|v| v * mu).collect();
            prop_assert!((c - cosine_similarity(&la, &mb).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn cross_entropy_bounded_below_by_target_entropy(
            raw in prop::collection::vec(0.0f64..1.0, 2..8),
            z_seed in prop::collection::vec(-10.0f64..10.0, 8),
        ) {
            let sum: f64 = raw.iter().sum();
            prop_assume!(sum > 1e-3);
            let q: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            let z = &z_seed[..q.len()];
            let (loss, grad) = cross_entropy(&q, z).unwrap();
            let entropy: f64 = q.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
            prop_assert!(loss >= entropy - 1e-12);
            let p = softmax(z);
            for ((g, pk), qk) in grad.iter().zip(&p).zip(&q) {
                prop_assert!((g - (pk - qk)).abs() < 1e-15);
            }
        }
    }
}
