//! Run configuration: a TOML document with one table per concern. Every
//! table is optional and unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use soft_diamond::analysis::Quadratic;
use soft_diamond::data::{self, LabeledDataset};
use soft_diamond::netcore::{micro_resnet, mlp, LayerSpec, Model, NetError};
use soft_diamond::prior_table::{DEFAULT_EPSILON, DEFAULT_N_GRID};
use soft_diamond::trainer::{GridSpec, TableSpec};
use soft_diamond::{QuadratureConfig, StableParams, TrainConfig};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub prior: PriorConfig,
    pub table: TableConfig,
    pub quadrature: QuadratureConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub grid: GridSpec,
    pub analysis: AnalysisConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorFamily {
    Sas,
    Laplace,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub family: PriorFamily,
    pub alpha: f64,
    pub gamma: f64,
    pub mu: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig { family: PriorFamily::Sas, alpha: 1.5, gamma: 1.0, mu: 0.0 }
    }
}

impl PriorConfig {
    pub fn stable(&self) -> Result<StableParams, CliError> {
        Ok(StableParams::symmetric(self.alpha, self.gamma, self.mu)?)
    }
}

/// Any two of `epsilon`, `n_grid` and `delta = epsilon / n_grid` fix the
/// table; all three must agree. Unset values default to `N = 400`,
/// `δ = 0.002`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TableConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Prebuilt table to load instead of building one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

impl TableConfig {
    pub fn resolve(&self) -> Result<(f64, usize), CliError> {
        let bad = |key: &str, msg: String| Err(CliError::validation(format!("table.{key}: {msg}")));
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return bad("epsilon", format!("{e} must be positive"));
            }
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return bad("delta", format!("{d} must be positive"));
            }
        }
        if self.n_grid == Some(0) {
            return bad("n_grid", "must be >= 1".into());
        }
        let from_delta = |eps: f64, d: f64| -> Result<usize, CliError> {
            let n = (eps / d).round();
            if n < 1.0 || ((n * d) - eps).abs() > 1e-9 * eps {
                return Err(CliError::validation(format!(
                    "table.delta: {d} does not divide epsilon {eps} into a whole number of steps"
                )));
            }
            Ok(n as usize)
        };
        match (self.epsilon, self.n_grid, self.delta) {
            (None, None, None) => Ok((DEFAULT_EPSILON, DEFAULT_N_GRID)),
            (Some(e), None, None) => Ok((e, DEFAULT_N_GRID)),
            (None, Some(n), None) => Ok((DEFAULT_EPSILON / DEFAULT_N_GRID as f64 * n as f64, n)),
            (None, None, Some(d)) => Ok((d * DEFAULT_N_GRID as f64, DEFAULT_N_GRID)),
            (Some(e), Some(n), None) => Ok((e, n)),
            (None, Some(n), Some(d)) => Ok((d * n as f64, n)),
            (Some(e), None, Some(d)) => Ok((e, from_delta(e, d)?)),
            (Some(e), Some(n), Some(d)) => {
                if from_delta(e, d)? != n {
                    return bad("delta", format!("{d} disagrees with epsilon {e} and n_grid {n}"));
                }
                Ok((e, n))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    MicroResnet,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub arch: Arch,
    /// Channel widths of the micro-ResNet stem and residual block.
    pub width_in: usize,
    pub width_mid: usize,
    /// Hidden units of the MLP.
    pub hidden: usize,
    /// Whether biases and batch-norm affine terms also receive the prior.
    pub prior_on_all: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { arch: Arch::MicroResnet, width_in: 8, width_mid: 16, hidden: 64, prior_on_all: false }
    }
}

impl ModelConfig {
    pub fn specs(&self, classes: usize) -> Vec<LayerSpec> {
        match self.arch {
            Arch::MicroResnet => micro_resnet(classes, self.width_in, self.width_mid),
            Arch::Mlp => mlp(classes, self.hidden),
        }
    }

    pub fn build(&self, input: &[usize], classes: usize, seed: u64) -> Result<Model, NetError> {
        let mut m = Model::new(input, &self.specs(classes))?;
        m.init_xavier_uniform(seed);
        if self.prior_on_all {
            m.set_prior_mask(|_| true);
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Cifar10,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Directory holding the CIFAR-10 binary batches.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub n_train: usize,
    pub n_test: usize,
    /// Synthetic data only.
    pub classes: usize,
    pub shape: Vec<usize>,
    pub difficulty: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            dir: None,
            n_train: 5000,
            n_test: 1000,
            classes: 10,
            shape: vec![3, 8, 8],
            difficulty: 2.5,
            seed: 1234,
        }
    }
}

impl DataConfig {
    pub fn load(&self) -> Result<(LabeledDataset, LabeledDataset), CliError> {
        Ok(match self.source {
            DataSource::Synthetic => data::make_synthetic_split(
                self.n_train,
                self.n_test,
                self.classes,
                &self.shape,
                self.difficulty,
                self.seed,
            )?,
            DataSource::Cifar10 => {
                let dir = self.dir.as_deref().unwrap_or(Path::new("."));
                data::load_cifar10(dir, Some((self.n_train, self.n_test)))?
            }
        })
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::validation(format!("data.{m}")));
        if self.n_train == 0 {
            return bad("n_train: must be >= 1");
        }
        if self.n_test == 0 {
            return bad("n_test: must be >= 1");
        }
        if self.source == DataSource::Cifar10 && self.dir.is_none() {
            return bad("dir: required for cifar10");
        }
        if self.source == DataSource::Synthetic {
            if self.classes < 2 {
                return bad("classes: must be >= 2");
            }
            if self.shape.len() != 3 || self.shape.contains(&0) {
                return bad("shape: must be [channels, height, width] with nonzero entries");
            }
            if !(self.difficulty >= 0.0 && self.difficulty.is_finite()) {
                return bad("difficulty: must be finite and >= 0");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Magnitude at or below which a weight counts as zero.
    pub sparsity_threshold: f64,
    pub prune_fractions: Vec<f64>,
    /// Kernel bandwidth; Silverman's rule when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kde_bandwidth: Option<f64>,
    pub kde_points: usize,
    /// Evaluation range; the weight range padded by three bandwidths when
    /// unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kde_range: Option<[f64; 2]>,
    /// Contours pass through `(axis_radius, 0)`.
    pub axis_radius: f64,
    pub resolution: usize,
    pub objective: Quadratic,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            sparsity_threshold: soft_diamond::trainer::SPARSITY_THRESHOLD,
            prune_fractions: (0..10).map(|i| i as f64 / 10.0).chain([0.95, 0.99]).collect(),
            kde_bandwidth: None,
            kde_points: 401,
            kde_range: None,
            axis_radius: 1.0,
            resolution: 360,
            objective: Quadratic { centre: [1.5, 0.5], a: [[1.0, 0.0], [0.0, 4.0]] },
        }
    }
}

impl AnalysisConfig {
    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::validation(format!("analysis.{m}")));
        if !(self.sparsity_threshold >= 0.0) {
            return bad("sparsity_threshold: must be >= 0".into());
        }
        if let Some(f) = self.prune_fractions.iter().find(|f| !(**f >= 0.0 && **f < 1.0)) {
            return bad(format!("prune_fractions: {f} is outside [0, 1)"));
        }
        if let Some(b) = self.kde_bandwidth {
            if !(b > 0.0 && b.is_finite()) {
                return bad(format!("kde_bandwidth: {b} must be positive"));
            }
        }
        if self.kde_points < 2 {
            return bad("kde_points: must be >= 2".into());
        }
        if let Some([lo, hi]) = self.kde_range {
            if !(lo < hi) {
                return bad(format!("kde_range: [{lo}, {hi}] is empty"));
            }
        }
        if !(self.axis_radius > 0.0 && self.axis_radius.is_finite()) {
            return bad(format!("axis_radius: {} must be positive", self.axis_radius));
        }
        if self.resolution < 4 {
            return bad("resolution: must be >= 4".into());
        }
        Ok(())
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn table_spec(&self) -> Result<TableSpec, CliError> {
        let (epsilon, n_grid) = self.table.resolve()?;
        Ok(TableSpec { epsilon, n_grid, quadrature: self.quadrature })
    }

    /// Checks the whole document before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.prior.family == PriorFamily::Sas {
            self.prior.stable()?;
        } else if !(self.prior.gamma > 0.0 && self.prior.gamma.is_finite()) {
            return Err(CliError::validation(format!("prior.gamma: {} must be positive", self.prior.gamma)));
        }
        if self.prior.family == PriorFamily::Uniform && self.train.prior_scale_c != 0.0 {
            return Err(CliError::validation("train.prior_scale_c: must be 0 with a uniform prior"));
        }
        self.table.resolve()?;
        self.quadrature.validate()?;
        self.train.validate()?;
        self.data.validate()?;
        let g = &self.grid;
        if let Some(a) = g.alphas.iter().find(|a| !(**a > 0.0 && **a <= 2.0)) {
            return Err(CliError::validation(format!("grid.alphas: {a} is outside (0, 2]")));
        }
        if let Some(v) = g.gammas.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(CliError::validation(format!("grid.gammas: {v} must be positive")));
        }
        if let Some(c) = g.cs.iter().find(|c| !(**c >= 0.0 && c.is_finite())) {
            return Err(CliError::validation(format!("grid.cs: {c} must be finite and >= 0")));
        }
        if g.seeds.is_empty() {
            return Err(CliError::validation("grid.seeds: must not be empty"));
        }
        self.analysis.validate()
    }
}
