//! Chambers–Mallows–Stuck variates for symmetric stable laws.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Uniform};

use super::StableParams;
use crate::rng;

/// Draws `n` variates from the symmetric law `params` (β is ignored).
/// Deterministic for a given seed.
pub fn sample(params: &StableParams, n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, "stable-sample");
    let mut out = vec![0.0; n];
    sample_into(params, &mut r, &mut out);
    out
}

/// Fills `out` with variates drawn from `rng`.
pub fn sample_into<R: Rng + ?Sized>(params: &StableParams, rng: &mut R, out: &mut [f64]) {
    let angle = Uniform::new(-FRAC_PI_2, FRAC_PI_2).expect("finite bounds");
    let alpha = params.alpha();
    for slot in out.iter_mut() {
        let v: f64 = angle.sample(rng);
        let w: f64 = Exp1.sample(rng);
        let x = if alpha == 1.0 {
            v.tan()
        } else {
            let a = (alpha * v).sin() / v.cos().powf(1.0 / alpha);
            let b = (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha);
            a * b
        };
        *slot = params.gamma() * x + params.mu();
    }
}
