//! Gauss–Kronrod quadrature and the one-sided cosine transform behind the
//! symmetric stable density.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::DensityError;

/// Kronrod abscissae on [-1, 1], descending; the odd entries are the
/// 7-point Gauss nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Numerical settings for density evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    /// Absolute error target for the density value.
    pub abs_tol: f64,
    /// Fraction of `abs_tol` that the discarded envelope tail may contribute.
    pub omega_max_cutoff: f64,
    /// Upper bound on integration sub-intervals per evaluation.
    pub max_panels: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { abs_tol: 1e-9, omega_max_cutoff: 0.1, max_panels: 1_000_000 }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<(), DensityError> {
        if !(self.abs_tol > 0.0 && self.abs_tol.is_finite()) {
            return Err(DensityError::InvalidConfig { field: "abs_tol", value: self.abs_tol });
        }
        if !(self.omega_max_cutoff > 0.0 && self.omega_max_cutoff < 1.0) {
            return Err(DensityError::InvalidConfig {
                field: "omega_max_cutoff",
                value: self.omega_max_cutoff,
            });
        }
        if self.max_panels == 0 {
            return Err(DensityError::InvalidConfig { field: "max_panels", value: 0.0 });
        }
        Ok(())
    }
}

/// One 15-point Kronrod evaluation with the QUADPACK error heuristic.
/// Returns `(estimate, error, ∫|f|)`; the last term drives roundoff control.
fn gk15_abs<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_k = WGK[7] * fc;
    let mut res_g = WG[3] * fc;
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let result = res_k * half;
    res_abs *= half.abs();
    res_asc *= half.abs();
    let mut err = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    (result, err, res_abs)
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Integral {
    pub value: f64,
    pub intervals: usize,
}

/// Globally adaptive bisection over `[a, b]`: keep splitting the interval with
/// the largest error estimate until the summed estimate drops below `tol`, or
/// below the roundoff level of `∫|f|` when that is larger.
pub(crate) fn adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    tol: f64,
    max_intervals: usize,
) -> Option<Integral> {
    struct Part {
        lo: f64,
        hi: f64,
        value: f64,
        err: f64,
        abs: f64,
    }
    let (value, err, abs) = gk15_abs(f, a, b);
    let mut parts = vec![Part { lo: a, hi: b, value, err, abs }];
    loop {
        let total_err: f64 = parts.iter().map(|p| p.err).sum();
        let total_abs: f64 = parts.iter().map(|p| p.abs).sum();
        if total_err <= tol.max(100.0 * f64::EPSILON * total_abs) {
            break;
        }
        if parts.len() >= max_intervals {
            return None;
        }
        let worst = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.total_cmp(&y.1.err))
            .map(|(i, _)| i)
            .expect("non-empty");
        let Part { lo, hi, .. } = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // Interval is at floating-point resolution; nothing left to gain.
            return None;
        }
        for (l, h) in [(lo, mid), (mid, hi)] {
            let (value, err, abs) = gk15_abs(f, l, h);
            parts.push(Part { lo: l, hi: h, value, err, abs });
        }
    }
    Some(Integral { value: parts.iter().map(|p| p.value).sum(), intervals: parts.len() })
}

/// Smallest `T` with `∫_T^∞ exp(-t^α) dt ≤ target`.
///
/// The tail equals `Γ(1/α, T^α) / α`, which is monotone in `T`, so a bisection
/// in `log T` suffices.
pub(crate) fn envelope_cutoff(alpha: f64, target: f64) -> f64 {
    use statrs::function::gamma::{gamma_ur, ln_gamma};
    let s = 1.0 / alpha;
    let log_scale = ln_gamma(s) - alpha.ln();
    let tail = |t: f64| -> f64 {
        let x = t.powf(alpha);
        (gamma_ur(s, x).ln() + log_scale).exp()
    };
    let mut hi = 1.0_f64;
    while tail(hi) > target {
        hi *= 2.0;
    }
    let mut lo = hi / 2.0;
    if tail(lo) <= target {
        return lo;
    }
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        if tail(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo < 1.0 + 1e-6 {
            break;
        }
    }
    hi
}

/// Panels beyond which the partial sums are extrapolated.
const MIN_PANELS_BEFORE_EXTRAPOLATION: usize = 6;
/// Partial sums fed into the repeated-averaging extrapolation.
const EXTRAPOLATION_WINDOW: usize = 16;

/// `∫_0^∞ exp(-t^α) cos(t y) dt` for `y ≥ 0`, to absolute accuracy `tol`.
///
/// The range is cut at the envelope threshold and split into half-periods
/// between consecutive zeros of `cos(t y)`. Each half-period is integrated
/// adaptively (sub-split at powers of two so the `t^α` cusp at the origin
/// and the slow envelope decay of small `α` are resolved). When many
/// half-periods remain, the alternating sequence of partial sums is
/// accelerated by repeated averaging.
pub(crate) fn cosine_transform(
    alpha: f64,
    y: f64,
    tol: f64,
    cfg: &QuadratureConfig,
) -> Result<f64, DensityError> {
    let t_max = envelope_cutoff(alpha, cfg.omega_max_cutoff * tol);
    let f = |t: f64| (-t.powf(alpha)).exp() * (t * y).cos();
    let piece_tol = (1.0 - cfg.omega_max_cutoff) * tol;
    let mut budget = cfg.max_panels;

    let fail = |t_reached: f64| DensityError::QuadratureFailure {
        alpha,
        y,
        abs_tol: tol,
        reached: t_reached,
    };

    // Zero of cos(t y) ending panel k.
    let zero = |k: usize| (k as f64 + 0.5) * PI / y;
    let panel_count = if y > 0.0 { (t_max * y / PI + 0.5).ceil() as usize } else { 1 };

    let mut integrate_panel = |a: f64, b: f64, tol: f64| -> Result<f64, DensityError> {
        let mut acc = 0.0;
        let mut lo = a;
        let cuts = geometric_cuts(a, b);
        let share = tol / cuts.len() as f64;
        for hi in cuts {
            let part = adaptive(&f, lo, hi, share, budget.max(1)).ok_or_else(|| fail(lo))?;
            budget = budget.saturating_sub(part.intervals);
            if budget == 0 {
                return Err(fail(hi));
            }
            acc += part.value;
            lo = hi;
        }
        Ok(acc)
    };

    if panel_count <= MIN_PANELS_BEFORE_EXTRAPOLATION + EXTRAPOLATION_WINDOW {
        let mut total = 0.0;
        let mut lo = 0.0;
        let share = piece_tol / panel_count as f64;
        for k in 0..panel_count {
            let hi = if y > 0.0 { zero(k).min(t_max) } else { t_max };
            if hi <= lo {
                break;
            }
            total += integrate_panel(lo, hi, share)?;
            lo = hi;
        }
        return Ok(total);
    }

    let per_panel = piece_tol * 1e-3;
    let mut sums: Vec<f64> = Vec::new();
    let mut running = 0.0;
    let mut lo = 0.0;
    let mut last_estimates: [f64; 2] = [f64::NAN, f64::NAN];
    for k in 0..panel_count {
        let hi = zero(k).min(t_max);
        running += integrate_panel(lo, hi, per_panel)?;
        sums.push(running);
        lo = hi;
        if lo >= t_max {
            return Ok(running);
        }
        if k >= MIN_PANELS_BEFORE_EXTRAPOLATION + EXTRAPOLATION_WINDOW {
            let estimate = repeated_average(&sums[sums.len() - EXTRAPOLATION_WINDOW..]);
            let converged = (estimate - last_estimates[1]).abs() <= 0.25 * piece_tol
                && (last_estimates[1] - last_estimates[0]).abs() <= 0.25 * piece_tol;
            if converged {
                return Ok(estimate);
            }
            last_estimates = [last_estimates[1], estimate];
        }
        if sums.len() > cfg.max_panels {
            return Err(fail(lo));
        }
    }
    Ok(running)
}

/// Breakpoints splitting `[a, b]` at powers of two (plus a first cut at 1 when
/// `a = 0`), ending with `b`.
fn geometric_cuts(a: f64, b: f64) -> Vec<f64> {
    let mut cuts = Vec::new();
    let mut p = if a <= 0.0 {
        // Resolve the cusp at the origin on dyadic scales below 1 as well.
        let mut p = 1.0_f64;
        while p > b {
            p /= 2.0;
        }
        p
    } else {
        2f64.powi(a.log2().floor() as i32 + 1)
    };
    while p < b {
        if p > a {
            cuts.push(p);
        }
        p *= 2.0;
    }
    cuts.push(b);
    cuts
}

/// Euler-style acceleration: average neighbouring partial sums until one
/// value remains.
fn repeated_average(sums: &[f64]) -> f64 {
    let mut level = sums.to_vec();
    while level.len() > 1 {
        level = level.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    }
    level[0]
}
