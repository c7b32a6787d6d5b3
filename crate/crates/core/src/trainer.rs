//! Bayesian backpropagation: stochastic gradient ascent on the log-likelihood
//! plus a scaled log-prior derivative, with heavy-ball momentum.
//!
//! With `g_t = ∇ ln p(y|x, θ_t) + c·T_V(T_K(θ_t))` (prior term only on
//! prior-masked parameters), the first step is `θ₁ = θ₀ + λ₀·g₀`, `β₁ = g₀`,
//! and every later step is `β_{t+1} = m·β_t + (1 − τ)·g_t`,
//! `θ_{t+1} = θ_t + λ_t·β_{t+1}`.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis;
use crate::data::{augment, AugmentFlags, LabeledDataset};
use crate::netcore::{Dropout, Mode, Model, NetError, Tensor};
use crate::prior_table::{DerivTable, TableError};
use crate::rng;
use crate::stable::{QuadratureConfig, StableParams};

/// Fraction of saturated lookups per epoch above which a warning is raised.
pub const SATURATION_WARN_FRACTION: f64 = 0.01;
/// Magnitude below which a weight counts as zero in grid summaries.
pub const SPARSITY_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient at epoch {epoch}, step {step}, parameter {param} (layer {layer}): {value}")]
    NonFiniteGradient { epoch: usize, step: u64, param: usize, layer: usize, value: f64 },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Table(#[from] TableError),
}

/// Piecewise-linear learning rate over the step fraction `t / total_steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct LrSchedule {
    knots: Vec<(f64, f64)>,
}

impl TryFrom<Vec<(f64, f64)>> for LrSchedule {
    type Error = TrainError;
    fn try_from(knots: Vec<(f64, f64)>) -> Result<Self, TrainError> {
        LrSchedule::new(knots)
    }
}

impl From<LrSchedule> for Vec<(f64, f64)> {
    fn from(s: LrSchedule) -> Self {
        s.knots
    }
}

impl LrSchedule {
    /// Knots `(fraction, rate)`: fractions strictly increasing from 0 to 1,
    /// rates positive.
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self, TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(format!("lr_schedule: {m}")));
        if knots.len() < 2 {
            return bad("needs at least two knots".into());
        }
        if knots[0].0 != 0.0 || knots[knots.len() - 1].0 != 1.0 {
            return bad("first knot must be at 0 and last at 1".into());
        }
        if knots.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return bad("fractions must be strictly increasing".into());
        }
        if let Some(k) = knots.iter().find(|k| !(k.1 > 0.0 && k.1.is_finite())) {
            return bad(format!("rate {} is not positive", k.1));
        }
        Ok(LrSchedule { knots })
    }

    pub fn constant(rate: f64) -> Result<Self, TrainError> {
        Self::new(vec![(0.0, rate), (1.0, rate)])
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn rate_at(&self, fraction: f64) -> f64 {
        let f = fraction.clamp(0.0, 1.0);
        let i = self.knots.partition_point(|k| k.0 <= f).clamp(1, self.knots.len() - 1);
        let ((f0, r0), (f1, r1)) = (self.knots[i - 1], self.knots[i]);
        r0 + (r1 - r0) * (f - f0) / (f1 - f0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Prior coefficient `c`; zero trains with a uniform prior.
    pub prior_scale_c: f64,
    pub momentum: f64,
    pub dampening: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    /// Inverted-dropout rate on the last ReLU output; zero disables it.
    pub dropout: f64,
    pub augment: AugmentFlags,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            prior_scale_c: 0.0,
            momentum: 0.9,
            dampening: 0.0,
            epochs: 10,
            batch_size: 64,
            lr_schedule: LrSchedule::new(vec![(0.0, 0.05), (0.3, 0.1), (1.0, 0.001)]).expect("valid"),
            seed: 0,
            dropout: 0.0,
            augment: AugmentFlags::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if !(self.prior_scale_c >= 0.0 && self.prior_scale_c.is_finite()) {
            return bad("prior_scale_c must be finite and >= 0");
        }
        if !(self.momentum > 0.0 && self.momentum <= 1.0) {
            return bad("momentum must be in (0, 1]");
        }
        if !(self.dampening >= 0.0 && self.dampening < 1.0) {
            return bad("dampening must be in [0, 1)");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be >= 1");
        }
        if !(self.dropout >= 0.0 && self.dropout < 1.0) {
            return bad("dropout must be in [0, 1)");
        }
        LrSchedule::new(self.lr_schedule.knots.clone())?;
        Ok(())
    }
}

/// Source of the log-prior derivative `(ln p)'(θ)`, before scaling by `c`.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorGradient {
    None,
    /// Quantised SαS derivative from a lookup table.
    Table(DerivTable),
    /// Laplace prior with scale `gamma`: `−sgn(θ)/γ`, zero at the origin.
    Laplace { gamma: f64 },
}

impl PriorGradient {
    pub fn derivative(&self, theta: f64) -> f64 {
        match self {
            PriorGradient::None => 0.0,
            PriorGradient::Table(t) => t.derivative(theta),
            PriorGradient::Laplace { gamma } => {
                if theta > 0.0 {
                    -1.0 / gamma
                } else if theta < 0.0 {
                    1.0 / gamma
                } else {
                    0.0
                }
            }
        }
    }

    fn saturates(&self, theta: f64) -> bool {
        matches!(self, PriorGradient::Table(t) if t.is_saturated(theta))
    }

    pub fn checksum(&self) -> Option<u32> {
        match self {
            PriorGradient::Table(t) => Some(t.checksum()),
            _ => None,
        }
    }
}

/// Momentum state of the ascent update.
#[derive(Debug, Clone, PartialEq)]
pub struct AscentState {
    momentum: f64,
    dampening: f64,
    buffers: Vec<Vec<f64>>,
    step: u64,
}

impl AscentState {
    /// One buffer per parameter tensor, with the given lengths.
    pub fn new(momentum: f64, dampening: f64, sizes: &[usize]) -> Self {
        AscentState { momentum, dampening, buffers: sizes.iter().map(|&n| vec![0.0; n]).collect(), step: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn buffers(&self) -> &[Vec<f64>] {
        &self.buffers
    }

    /// Applies one update to every tensor in `params` using `grads`.
    pub fn apply(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        let first = self.step == 0;
        let damp = 1.0 - self.dampening;
        for ((theta, g), beta) in params.iter_mut().zip(grads).zip(&mut self.buffers) {
            for ((t, &gi), b) in theta.iter_mut().zip(g.iter()).zip(beta.iter_mut()) {
                *b = if first { gi } else { self.momentum * *b + damp * gi };
                *t += lr * *b;
            }
        }
        self.step += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Running accuracy of the training-mode forward passes.
    pub train_accuracy: f64,
    pub train_log_likelihood: f64,
    pub test: Option<Evaluation>,
    /// Fraction of prior lookups outside the table domain.
    pub saturated_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainWarning {
    TableDomain { epoch: usize, saturated_fraction: f64 },
}

impl std::fmt::Display for TrainWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainWarning::TableDomain { epoch, saturated_fraction } => write!(
                f,
                "epoch {epoch}: {:.2}% of prior lookups saturated; the table domain may be too small",
                100.0 * saturated_fraction
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub final_weights: Vec<Tensor>,
    /// Learning rate used at every optimizer step.
    pub lr_trace: Vec<f64>,
    pub warnings: Vec<TrainWarning>,
    pub seed: u64,
    pub wall_clock: Duration,
}

impl TrainReport {
    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.test.map(|t| t.accuracy))
    }

    /// Per-epoch rows; wall-clock time is deliberately left out so that
    /// reruns are byte-identical.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "epoch",
            "train_accuracy",
            "train_log_likelihood",
            "test_accuracy",
            "test_log_likelihood",
            "saturated_fraction",
        ])?;
        for e in &self.epochs {
            let (ta, tl) = e.test.map_or((String::new(), String::new()), |t| {
                (t.accuracy.to_string(), t.mean_log_likelihood.to_string())
            });
            out.write_record([
                e.epoch.to_string(),
                e.train_accuracy.to_string(),
                e.train_log_likelihood.to_string(),
                ta,
                tl,
                e.saturated_fraction.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn check_compatible(model: &Model, data: &LabeledDataset) -> Result<(), TrainError> {
    if model.input_shape() != data.sample_shape() {
        return Err(TrainError::InvalidConfig(format!(
            "model input {:?} does not match samples {:?}",
            model.input_shape(),
            data.sample_shape()
        )));
    }
    if model.output_shape() != [data.classes()] {
        return Err(TrainError::InvalidConfig(format!(
            "model output {:?} does not match {} classes",
            model.output_shape(),
            data.classes()
        )));
    }
    Ok(())
}

/// Accuracy (argmax of the softmax) and mean log-likelihood in evaluation
/// mode.
pub fn evaluate(model: &Model, data: &LabeledDataset) -> Result<Evaluation, TrainError> {
    check_compatible(model, data)?;
    const CHUNK: usize = 256;
    let k = data.classes();
    let (mut correct, mut ll) = (0usize, 0.0);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(CHUNK) {
        let (x, labels) = data.batch(chunk);
        let f = model.forward(&x, Mode::Eval, None)?;
        ll += model.log_likelihood(&f, &Tensor::one_hot(&labels, k))? * chunk.len() as f64;
        correct += f.output().data().chunks_exact(k).zip(&labels).filter(|(p, &l)| argmax(p) == l).count();
    }
    let n = data.len() as f64;
    Ok(Evaluation { accuracy: correct as f64 / n, mean_log_likelihood: ll / n })
}

/// Runs the ascent recursion on `model` in place.
pub fn train(
    model: &mut Model,
    train_set: &LabeledDataset,
    test_set: Option<&LabeledDataset>,
    prior: &PriorGradient,
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    check_compatible(model, train_set)?;
    if let Some(t) = test_set {
        check_compatible(model, t)?;
    }
    if cfg.prior_scale_c > 0.0 && *prior == PriorGradient::None {
        return Err(TrainError::InvalidConfig("prior_scale_c > 0 needs a prior".into()));
    }
    let started = Instant::now();
    let use_prior = cfg.prior_scale_c > 0.0;
    let c = cfg.prior_scale_c;
    let k = train_set.classes();
    let n = train_set.len();
    let per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = (per_epoch * cfg.epochs) as f64;
    let sizes: Vec<usize> = model.params().iter().map(|p| p.value.len()).collect();
    let mask = model.prior_mask();
    let layer_of: Vec<usize> = model.params().iter().map(|p| p.layer).collect();
    let mut opt = AscentState::new(cfg.momentum, cfg.dampening, &sizes);
    let mut report = TrainReport {
        epochs: Vec::with_capacity(cfg.epochs),
        final_weights: Vec::new(),
        lr_trace: Vec::with_capacity(total_steps as usize),
        warnings: Vec::new(),
        seed: cfg.seed,
        wall_clock: Duration::ZERO,
    };
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::indexed_stream(cfg.seed, "shuffle", epoch as u64));
        let (mut correct, mut ll_sum) = (0usize, 0.0);
        let (mut lookups, mut saturated) = (0u64, 0u64);
        for batch_idx in order.chunks(cfg.batch_size) {
            let t = opt.steps_taken();
            let lr = cfg.lr_schedule.rate_at(t as f64 / total_steps);
            report.lr_trace.push(lr);
            let (mut x, labels) = train_set.batch(batch_idx);
            if !cfg.augment.is_identity() {
                x = augment(&x, &cfg.augment, cfg.seed, t);
            }
            let dropout = (cfg.dropout > 0.0)
                .then(|| Dropout { rate: cfg.dropout, seed: rng::derive_indexed(cfg.seed, "dropout", t) });
            let targets = Tensor::one_hot(&labels, k);
            let fwd = model.forward(&x, Mode::Train, dropout)?;
            ll_sum += model.log_likelihood(&fwd, &targets)? * labels.len() as f64;
            correct +=
                fwd.output().data().chunks_exact(k).zip(&labels).filter(|(p, &l)| argmax(p) == l).count();
            let mut grads = model.backward(&fwd, &targets)?.params;
            model.update_running_stats(&fwd);

            if use_prior {
                for (pi, (g, p)) in grads.iter_mut().zip(model.params()).enumerate() {
                    if !mask[pi] {
                        continue;
                    }
                    for (gi, &theta) in g.data_mut().iter_mut().zip(p.value.data()) {
                        *gi += c * prior.derivative(theta);
                        saturated += prior.saturates(theta) as u64;
                    }
                    lookups += p.value.len() as u64;
                }
            }
            for (pi, g) in grads.iter().enumerate() {
                if let Some(v) = g.data().iter().find(|v| !v.is_finite()) {
                    return Err(TrainError::NonFiniteGradient {
                        epoch,
                        step: t,
                        param: pi,
                        layer: layer_of[pi],
                        value: *v,
                    });
                }
            }
            let gslices: Vec<&[f64]> = grads.iter().map(|g| g.data()).collect();
            let mut views: Vec<&mut [f64]> = model.params_mut().iter_mut().map(|p| p.value.data_mut()).collect();
            opt.apply(&mut views, &gslices, lr);
        }
        let saturated_fraction = if lookups > 0 { saturated as f64 / lookups as f64 } else { 0.0 };
        if saturated_fraction > SATURATION_WARN_FRACTION {
            report.warnings.push(TrainWarning::TableDomain { epoch, saturated_fraction });
        }
        let test = test_set.map(|t| evaluate(model, t)).transpose()?;
        report.epochs.push(EpochStats {
            epoch,
            train_accuracy: correct as f64 / n as f64,
            train_log_likelihood: ll_sum / n as f64,
            test,
            saturated_fraction,
        });
    }
    report.final_weights = model.params().iter().map(|p| p.value.clone()).collect();
    report.wall_clock = started.elapsed();
    Ok(report)
}

/// Prior family of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriorKind {
    Uniform,
    Stable { alpha: f64 },
    Laplace,
}

impl PriorKind {
    pub fn label(&self) -> String {
        match self {
            PriorKind::Uniform => "uniform".into(),
            PriorKind::Stable { alpha } => format!("sas(alpha={alpha})"),
            PriorKind::Laplace => "laplace".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub alphas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub cs: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Adds a closed-form Laplace row for every `(γ, c, seed)`.
    pub laplace: bool,
    /// Adds one `c = 0` row per seed.
    pub baseline: bool,
}

/// Domain, resolution and quadrature settings for building tables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableSpec {
    pub epsilon: f64,
    pub n_grid: usize,
    pub quadrature: QuadratureConfig,
}

impl Default for TableSpec {
    fn default() -> Self {
        TableSpec {
            epsilon: crate::prior_table::DEFAULT_EPSILON,
            n_grid: crate::prior_table::DEFAULT_N_GRID,
            quadrature: QuadratureConfig::default(),
        }
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            alphas: vec![2.0, 1.5, 1.0, 0.5],
            gammas: vec![1.0],
            cs: vec![1e-3],
            seeds: vec![0],
            laplace: false,
            baseline: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub prior: PriorKind,
    pub gamma: f64,
    pub c: f64,
    /// `None` on mean rows.
    pub seed: Option<u64>,
    pub test_accuracy: f64,
    pub train_accuracy: f64,
    /// Fraction of prior-masked weights with `|w| ≤ 10⁻³`.
    pub sparsity: f64,
    /// Checksum of the derivative table the cell used, if any.
    pub table_checksum: Option<u32>,
    pub error: Option<String>,
}

struct Cell {
    prior: PriorKind,
    gamma: f64,
    c: f64,
    seed: u64,
}

/// Trains every `(prior, γ, c, seed)` cell and returns one row per cell.
///
/// A cell's randomness depends on its seed only, so cells sharing a seed see
/// the same initialisation, batch order and augmentation and can be compared
/// pairwise. `make_model` builds an initialised model for a seed.
pub fn run_experiment_grid(
    base: &TrainConfig,
    spec: &GridSpec,
    tables: &TableSpec,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    make_model: &(dyn Fn(u64) -> Result<Model, NetError> + Sync),
) -> Vec<GridRow> {
    let mut priors: Vec<(PriorKind, f64, Result<PriorGradient, String>)> = Vec::new();
    for &gamma in &spec.gammas {
        for &alpha in &spec.alphas {
            let built = StableParams::symmetric(alpha, gamma, 0.0)
                .map_err(TableError::from)
                .and_then(|p| DerivTable::build(p, tables.epsilon, tables.n_grid, &tables.quadrature))
                .map(PriorGradient::Table)
                .map_err(|e| e.to_string());
            priors.push((PriorKind::Stable { alpha }, gamma, built));
        }
        if spec.laplace {
            let lap = if gamma > 0.0 { Ok(PriorGradient::Laplace { gamma }) } else { Err(format!("gamma {gamma}")) };
            priors.push((PriorKind::Laplace, gamma, lap));
        }
    }
    let mut cells = Vec::new();
    let mut sources = Vec::new();
    if spec.baseline {
        for &seed in &spec.seeds {
            cells.push(Cell { prior: PriorKind::Uniform, gamma: 0.0, c: 0.0, seed });
            sources.push(Ok(PriorGradient::None));
        }
    }
    for (kind, gamma, src) in &priors {
        for &c in &spec.cs {
            for &seed in &spec.seeds {
                cells.push(Cell { prior: *kind, gamma: *gamma, c, seed });
                sources.push(src.clone());
            }
        }
    }
    cells
        .par_iter()
        .zip(sources.par_iter())
        .map(|(cell, src)| {
            let mut row = GridRow {
                prior: cell.prior,
                gamma: cell.gamma,
                c: cell.c,
                seed: Some(cell.seed),
                test_accuracy: f64::NAN,
                train_accuracy: f64::NAN,
                sparsity: f64::NAN,
                table_checksum: src.as_ref().ok().and_then(PriorGradient::checksum),
                error: None,
            };
            let outcome = src.clone().map_err(|e| e.to_string()).and_then(|prior| {
                let mut model = make_model(cell.seed).map_err(|e| e.to_string())?;
                let cfg = TrainConfig { prior_scale_c: cell.c, seed: cell.seed, ..base.clone() };
                let report = train(&mut model, train_set, Some(test_set), &prior, &cfg).map_err(|e| e.to_string())?;
                Ok((report, analysis::sparsity(&model, SPARSITY_THRESHOLD).fraction))
            });
            match outcome {
                Ok((report, sparsity)) => {
                    let last = report.epochs.last().expect("epochs >= 1");
                    row.train_accuracy = last.train_accuracy;
                    row.test_accuracy = last.test.map_or(f64::NAN, |t| t.accuracy);
                    row.sparsity = sparsity;
                }
                Err(e) => row.error = Some(e),
            }
            row
        })
        .collect()
}

/// Mean over seeds of every `(prior, γ, c)` group that has no failed cell.
pub fn grid_means(rows: &[GridRow]) -> Vec<GridRow> {
    let mut out: Vec<(GridRow, usize)> = Vec::new();
    for r in rows.iter().filter(|r| r.seed.is_some()) {
        let pos = out.iter().position(|(m, _)| m.prior == r.prior && m.gamma == r.gamma && m.c == r.c);
        match pos {
            None => out.push((GridRow { seed: None, ..r.clone() }, 1)),
            Some(i) => {
                let (m, count) = &mut out[i];
                m.test_accuracy += r.test_accuracy;
                m.train_accuracy += r.train_accuracy;
                m.sparsity += r.sparsity;
                m.error = m.error.take().or_else(|| r.error.clone());
                *count += 1;
            }
        }
    }
    out.into_iter()
        .map(|(mut m, count)| {
            let k = count as f64;
            m.test_accuracy /= k;
            m.train_accuracy /= k;
            m.sparsity /= k;
            m
        })
        .collect()
}

/// Cell rows followed by mean rows (seed column `mean`).
pub fn write_grid_csv<W: Write>(rows: &[GridRow], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["prior", "alpha", "gamma", "c", "seed", "test_accuracy", "train_accuracy", "sparsity", "table_checksum", "error"])?;
    for r in rows.iter().chain(grid_means(rows).iter()) {
        let alpha = match r.prior {
            PriorKind::Stable { alpha } => alpha.to_string(),
            _ => String::new(),
        };
        let name = match r.prior {
            PriorKind::Stable { .. } => "sas",
            PriorKind::Laplace => "laplace",
            PriorKind::Uniform => "uniform",
        };
        out.write_record([
            name.to_string(),
            alpha,
            r.gamma.to_string(),
            r.c.to_string(),
            r.seed.map_or("mean".to_string(), |s| s.to_string()),
            r.test_accuracy.to_string(),
            r.train_accuracy.to_string(),
            r.sparsity.to_string(),
            r.table_checksum.map_or(String::new(), |c| format!("{c:08x}")),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
