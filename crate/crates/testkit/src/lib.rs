//! Reference implementations used to cross-check `ldl-core` in tests.
//!
//! Nothing here shares code paths with the solver or the training loop it
//! checks; the closed forms, the brute-force transport search and the plain
//! cross-entropy trainer are written from the definitions.

pub mod ot;
pub mod pipeline;
pub mod stats;

use rand::Rng;

/// Random point of the probability simplex with `n` entries. Some entries
/// are zeroed to exercise degenerate transport problems.
pub fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random_bool(0.15) {
                0.0
            } else {
                -rng.random_range(1e-12f64..1.0).ln()
            }
        })
        .collect();
    if v.iter().all(|&x| x == 0.0) {
        v[rng.random_range(0..n)] = 1.0;
    }
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}
