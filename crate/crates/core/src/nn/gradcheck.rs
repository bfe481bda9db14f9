//! Central finite differences, used as the reference for every analytic gradient.

use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

pub fn finite_difference_grad<F>(mut loss_fn: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("step must be positive, got {h}")));
    }
    let mut probe = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = loss_fn(&probe);
        probe[i] = orig - h;
        let down = loss_fn(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite("finite-difference loss"));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// `‖a − b‖ / max(‖a‖ + ‖b‖, floor)`; the floor keeps all-zero pairs at zero error.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = super::linalg::norm(a) + super::linalg::norm(b);
    diff / scale.max(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let g = finite_difference_grad(|p| p[0] * p[0], &[3.0], DEFAULT_STEP).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let g = finite_difference_grad(|_| 4.2, &[1.0, -2.0, 0.5], DEFAULT_STEP).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sum_loss_has_unit_gradient() {
        let g =
            finite_difference_grad(|p| p.iter().sum(), &[0.3, -7.0, 12.5, 1e3], DEFAULT_STEP)
                .unwrap();
        assert!(g.iter().all(|v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let r = finite_difference_grad(|p| 1.0 / (p[0] - 1e-5).abs().min(0.0), &[0.0], 1e-5);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn non_positive_step_rejected() {
        assert!(finite_difference_grad(|p| p[0], &[0.0], 0.0).is_err());
    }
}
