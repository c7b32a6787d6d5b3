//! Post-training analysis: sparsity, magnitude pruning, weight KDE,
//! constraint-set contours and the two-weight least-squares toy problem.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::data::LabeledDataset;
use crate::netcore::Model;
use crate::stable::{self, DensityError, QuadratureConfig, StableParams};
use crate::trainer::{self, TrainError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("model has no prior-masked weights")]
    EmptyModel,
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("level {kappa} is not below the maximum {max} of the log-density sum")]
    EmptyLevelSet { kappa: f64, max: f64 },
    #[error("no sign change along the ray at angle {angle} (level too close to the maximum or density noise)")]
    RootNotBracketed { angle: f64 },
    #[error("budget {kappa} admits no feasible point (maximum {max})")]
    InfeasibleBudget { kappa: f64, max: f64 },
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSparsity {
    pub layer: usize,
    pub kind: &'static str,
    pub near_zero: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsityReport {
    pub threshold: f64,
    /// Fraction of prior-masked weights with `|w| ≤ threshold`.
    pub fraction: f64,
    pub near_zero: usize,
    pub total: usize,
    pub per_layer: Vec<LayerSparsity>,
    /// `m₄ / m₂²` of the weights (3 for a Gaussian); `None` if the weights
    /// are constant.
    pub kurtosis: Option<f64>,
}

/// Values of every prior-masked parameter in layer order.
pub fn masked_weights(model: &Model) -> Vec<f64> {
    model.params().iter().filter(|p| p.prior).flat_map(|p| p.value.data().iter().copied()).collect()
}

/// Count-based sparsity of the prior-masked weights.
pub fn sparsity(model: &Model, threshold: f64) -> SparsityReport {
    let mut per_layer: Vec<LayerSparsity> = Vec::new();
    for p in model.params().iter().filter(|p| p.prior) {
        let near = p.value.data().iter().filter(|w| w.abs() <= threshold).count();
        match per_layer.iter_mut().find(|l| l.layer == p.layer) {
            Some(l) => {
                l.near_zero += near;
                l.total += p.value.len();
            }
            None => per_layer.push(LayerSparsity {
                layer: p.layer,
                kind: model.layers()[p.layer].spec().kind(),
                near_zero: near,
                total: p.value.len(),
            }),
        }
    }
    let near_zero: usize = per_layer.iter().map(|l| l.near_zero).sum();
    let total: usize = per_layer.iter().map(|l| l.total).sum();
    SparsityReport {
        threshold,
        fraction: if total > 0 { near_zero as f64 / total as f64 } else { 0.0 },
        near_zero,
        total,
        per_layer,
        kurtosis: kurtosis(&masked_weights(model)),
    }
}

/// Fraction of `values` with `|v| ≤ threshold`.
pub fn fraction_near_zero(values: &[f64], threshold: f64) -> f64 {
    values.iter().filter(|v| v.abs() <= threshold).count() as f64 / values.len().max(1) as f64
}

pub fn kurtosis(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    (m2 > 0.0).then(|| m4 / (m2 * m2))
}

/// Per parameter tensor, `true` where the weight was kept.
pub type PruneMask = Vec<Vec<bool>>;

/// Zeroes the `⌊fraction·n⌋` smallest-magnitude prior-masked weights, ties
/// broken by scan order.
pub fn magnitude_prune(model: &Model, fraction: f64) -> Result<(Model, PruneMask), AnalysisError> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(AnalysisError::Invalid(format!("prune fraction {fraction} not in [0, 1)")));
    }
    let mut entries: Vec<(f64, usize, usize)> = Vec::new();
    for (pi, p) in model.params().iter().enumerate().filter(|(_, p)| p.prior) {
        entries.extend(p.value.data().iter().enumerate().map(|(k, w)| (w.abs(), pi, k)));
    }
    let count = (fraction * entries.len() as f64).floor() as usize;
    // Stable sort keeps scan order among equal magnitudes.
    entries.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut pruned = model.clone();
    let mut mask: PruneMask = model.params().iter().map(|p| vec![true; p.value.len()]).collect();
    for &(_, pi, k) in &entries[..count] {
        pruned.params_mut()[pi].value.data_mut()[k] = 0.0;
        mask[pi][k] = false;
    }
    Ok((pruned, mask))
}

/// Re-applies a mask, e.g. after further updates.
pub fn apply_mask(model: &mut Model, mask: &PruneMask) {
    for (p, m) in model.params_mut().iter_mut().zip(mask) {
        for (w, keep) in p.value.data_mut().iter_mut().zip(m) {
            if !keep {
                *w = 0.0;
            }
        }
    }
}

/// Test accuracy after pruning each fraction of the given model (no
/// retraining).
pub fn prune_curve(model: &Model, fractions: &[f64], data: &LabeledDataset) -> Result<Vec<(f64, f64)>, AnalysisError> {
    fractions
        .iter()
        .map(|&f| {
            let (pruned, _) = magnitude_prune(model, f)?;
            Ok((f, trainer::evaluate(&pruned, data)?.accuracy))
        })
        .collect()
}

/// Gaussian-kernel density estimate of `values` on `grid`.
pub fn kde(values: &[f64], bandwidth: f64, grid: &[f64]) -> Result<Vec<f64>, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::EmptyModel);
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(AnalysisError::Invalid(format!("bandwidth {bandwidth}")));
    }
    let norm = 1.0 / (values.len() as f64 * bandwidth * (2.0 * PI).sqrt());
    Ok(grid
        .par_iter()
        .map(|&x| values.iter().map(|v| (-0.5 * ((x - v) / bandwidth).powi(2)).exp()).sum::<f64>() * norm)
        .collect())
}

/// KDE of the model's prior-masked weights.
pub fn weight_kde(model: &Model, bandwidth: f64, grid: &[f64]) -> Result<Vec<f64>, AnalysisError> {
    kde(&masked_weights(model), bandwidth, grid)
}

/// Silverman's rule-of-thumb bandwidth.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    1.06 * sd * n.powf(-0.2)
}

/// `n` evenly spaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Trapezoid rule over a sampled curve.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourPoint {
    pub angle: f64,
    pub theta1: f64,
    pub theta2: f64,
}

impl ContourPoint {
    pub fn radius(&self) -> f64 {
        self.theta1.hypot(self.theta2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryContour {
    pub params: StableParams,
    pub kappa: f64,
    /// Counter-clockwise from the positive `θ₁` axis; the last point repeats
    /// the first.
    pub points: Vec<ContourPoint>,
}

/// Bisection stops once the level residual is below this.
pub const CONTOUR_TOL: f64 = 1e-11;

fn log_sum(params: &StableParams, quad: &QuadratureConfig, t1: f64, t2: f64) -> Result<f64, DensityError> {
    Ok(stable::log_pdf(params, t1, quad)? + stable::log_pdf(params, t2, quad)?)
}

/// `2 ln h(µ)`, the largest value of the log-density sum.
pub fn max_level(params: &StableParams, quad: &QuadratureConfig) -> Result<f64, DensityError> {
    log_sum(params, quad, params.mu(), params.mu())
}

/// Level whose contour meets the `θ₁` axis at `radius`.
pub fn kappa_for_axis_radius(params: &StableParams, radius: f64, quad: &QuadratureConfig) -> Result<f64, DensityError> {
    log_sum(params, quad, params.mu() + radius, params.mu())
}

/// Distance from the mode to the level set along direction `angle`.
pub fn level_radius(params: &StableParams, kappa: f64, angle: f64, quad: &QuadratureConfig) -> Result<f64, AnalysisError> {
    let max = max_level(params, quad)?;
    if !(kappa < max) {
        return Err(AnalysisError::EmptyLevelSet { kappa, max });
    }
    let (c, s) = (angle.cos(), angle.sin());
    let mu = params.mu();
    let f = |r: f64| -> Result<f64, DensityError> { Ok(log_sum(params, quad, mu + r * c, mu + r * s)? - kappa) };
    let mut lo = 0.0;
    let mut hi = params.gamma();
    let mut tries = 0;
    while f(hi)? > 0.0 {
        lo = hi;
        hi *= 2.0;
        tries += 1;
        if tries > 80 {
            return Err(AnalysisError::RootNotBracketed { angle });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = f(mid)?;
        if v.abs() < CONTOUR_TOL || hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(mid);
        }
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Traces `ln h(θ₁) + ln h(θ₂) = κ` by radial bisection on `resolution`
/// equally spaced angles.
pub fn constraint_contour(
    params: &StableParams,
    kappa: f64,
    resolution: usize,
    quad: &QuadratureConfig,
) -> Result<GeometryContour, AnalysisError> {
    if resolution < 3 {
        return Err(AnalysisError::Invalid(format!("resolution {resolution} < 3")));
    }
    let mut points = (0..resolution)
        .into_par_iter()
        .map(|j| {
            let angle = 2.0 * PI * j as f64 / resolution as f64;
            let r = level_radius(params, kappa, angle, quad)?;
            Ok(ContourPoint {
                angle,
                theta1: params.mu() + r * angle.cos(),
                theta2: params.mu() + r * angle.sin(),
            })
        })
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    points.push(points[0].clone());
    Ok(GeometryContour { params: *params, kappa, points })
}

/// Diagonal-to-axis radius ratio of the level set through `(axis_radius, 0)`:
/// 1 for a circle, `1/√2` for an L1 diamond, smaller for star shapes.
pub fn diagonal_axis_ratio(params: &StableParams, axis_radius: f64, quad: &QuadratureConfig) -> Result<f64, AnalysisError> {
    let kappa = kappa_for_axis_radius(params, axis_radius, quad)?;
    Ok(level_radius(params, kappa, PI / 4.0, quad)? / axis_radius)
}

/// `q(θ) = (θ − centre)ᵀ A (θ − centre)` with symmetric positive definite `A`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quadratic {
    pub centre: [f64; 2],
    pub a: [[f64; 2]; 2],
}

impl Quadratic {
    pub fn value(&self, t: [f64; 2]) -> f64 {
        let d = [t[0] - self.centre[0], t[1] - self.centre[1]];
        d[0] * (self.a[0][0] * d[0] + self.a[0][1] * d[1]) + d[1] * (self.a[1][0] * d[0] + self.a[1][1] * d[1])
    }

    fn validate(&self) -> Result<(), AnalysisError> {
        let [[a, b], [c, d]] = self.a;
        if b != c || !(a > 0.0) || !(a * d - b * c > 0.0) {
            return Err(AnalysisError::Invalid("quadratic form must be symmetric positive definite".into()));
        }
        Ok(())
    }
}

/// Number of angles in the coarse boundary scan of [`toy_lse_solve`].
pub const TOY_SCAN: usize = 720;

/// Minimises `q` subject to `ln h(θ₁) + ln h(θ₂) ≥ κ`.
///
/// An interior unconstrained optimum is returned as is. Otherwise the optimum
/// lies on the (star-shaped) boundary, which is scanned by angle and refined
/// by golden-section search around the best scan point.
pub fn toy_lse_solve(
    objective: &Quadratic,
    params: &StableParams,
    kappa: f64,
    quad: &QuadratureConfig,
) -> Result<[f64; 2], AnalysisError> {
    objective.validate()?;
    let max = max_level(params, quad)?;
    if !(kappa < max) {
        return Err(AnalysisError::InfeasibleBudget { kappa, max });
    }
    let c = objective.centre;
    if log_sum(params, quad, c[0], c[1])? >= kappa {
        return Ok(c);
    }
    let mu = params.mu();
    let point = |angle: f64| -> Result<[f64; 2], AnalysisError> {
        let r = level_radius(params, kappa, angle, quad)?;
        Ok([mu + r * angle.cos(), mu + r * angle.sin()])
    };
    let step = 2.0 * PI / TOY_SCAN as f64;
    let scan = (0..TOY_SCAN)
        .into_par_iter()
        .map(|j| point(j as f64 * step).map(|p| objective.value(p)))
        .collect::<Result<Vec<f64>, _>>()?;
    let best = (0..TOY_SCAN).min_by(|&i, &j| scan[i].total_cmp(&scan[j])).expect("non-empty scan");
    let (mut lo, mut hi) = ((best as f64 - 1.0) * step, (best as f64 + 1.0) * step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let mut f1 = objective.value(point(x1)?);
    let mut f2 = objective.value(point(x2)?);
    while hi - lo > 1e-10 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = objective.value(point(x1)?);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = objective.value(point(x2)?);
        }
    }
    point(0.5 * (lo + hi))
}

/// One-sided paired t-test of `H₁: mean(a − b) > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTTest {
    pub mean_diff: f64,
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest, AnalysisError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(AnalysisError::Invalid("paired test needs two equal-length samples of size >= 2".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let df = n - 1.0;
    if sd == 0.0 {
        let p_value = if mean > 0.0 { 0.0 } else { 1.0 };
        let t = if mean == 0.0 { 0.0 } else { mean.signum() * f64::INFINITY };
        return Ok(PairedTTest { mean_diff: mean, t, df, p_value });
    }
    let t = mean / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| AnalysisError::Invalid(e.to_string()))?;
    Ok(PairedTTest { mean_diff: mean, t, df, p_value: 1.0 - dist.cdf(t) })
}

pub fn write_contour_csv<W: Write>(contour: &GeometryContour, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["angle", "theta1", "theta2"])?;
    for p in &contour.points {
        out.write_record([p.angle.to_string(), p.theta1.to_string(), p.theta2.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_kde_csv<W: Write>(grid: &[f64], density: &[f64], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["grid", "density"])?;
    for (x, y) in grid.iter().zip(density) {
        out.write_record([x.to_string(), y.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_prune_csv<W: Write>(curve: &[(f64, f64)], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["fraction", "accuracy"])?;
    for (f, a) in curve {
        out.write_record([f.to_string(), a.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
