//! `soft-diamond`: density curves, samples, derivative tables, training,
//! grids and post-training analysis from one binary.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliError;

pub const VERSION: &str = env!("SOFT_DIAMOND_VERSION");

#[derive(Debug, Parser)]
#[command(name = "soft-diamond", version = VERSION, about = "Soft-diamond (SαS prior) training and analysis")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
pub struct PriorArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
}

#[derive(Debug, Args)]
pub struct OutDir {
    /// Directory for CSV outputs and the manifest.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelSource {
    /// Analyse this checkpoint instead of training a model from the config.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Density curve h(θ) on an even grid.
    Density {
        #[command(flatten)]
        prior: PriorArgs,
        #[arg(long, default_value_t = -5.0, allow_negative_numbers = true)]
        from: f64,
        #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
        to: f64,
        #[arg(long, default_value_t = 201)]
        points: usize,
        /// CSV destination; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Independent draws from the stable law.
    Sample {
        #[command(flatten)]
        prior: PriorArgs,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Log-prior derivative tables.
    #[command(subcommand)]
    Table(TableCommand),
    /// Trains one model.
    Train {
        #[command(flatten)]
        prior: PriorArgs,
        /// Prior coefficient c.
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Trains every cell of the configured grid.
    Grid {
        #[command(flatten)]
        out: OutDir,
    },
    /// Accuracy after magnitude pruning, without retraining.
    Prune {
        #[command(flatten)]
        source: ModelSource,
        #[command(flatten)]
        out: OutDir,
    },
    /// Kernel density estimate of the trained weights.
    Kde {
        #[command(flatten)]
        source: ModelSource,
        #[arg(long)]
        bandwidth: Option<f64>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Level-set contour of the two-weight log-prior.
    Geometry {
        #[command(flatten)]
        prior: PriorArgs,
        #[arg(long)]
        axis_radius: Option<f64>,
        #[arg(long)]
        resolution: Option<usize>,
        #[command(flatten)]
        out: OutDir,
    },
}

#[derive(Debug, Subcommand)]
enum TableCommand {
    /// Builds a table and writes it in binary form.
    Build {
        #[command(flatten)]
        prior: PriorArgs,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        n_grid: Option<usize>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verifies a table file and prints its header; `--csv` dumps the values.
    Inspect {
        file: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn apply_prior(cfg: &mut RunConfig, p: &PriorArgs) {
    if let Some(a) = p.alpha {
        cfg.prior.alpha = a;
    }
    if let Some(g) = p.gamma {
        cfg.prior.gamma = g;
    }
    if let Some(m) = p.mu {
        cfg.prior.mu = m;
    }
}

fn apply_out(cfg: &mut RunConfig, o: &OutDir) {
    if let Some(d) = &o.out_dir {
        cfg.output_dir = Some(d.clone());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Density { prior, from, to, points, out } => {
            apply_prior(&mut cfg, &prior);
            cfg.validate()?;
            commands::density(&cfg, from, to, points, out.as_deref())
        }
        Command::Sample { prior, n, seed, out } => {
            apply_prior(&mut cfg, &prior);
            cfg.validate()?;
            commands::sample(&cfg, n, seed, out.as_deref())
        }
        Command::Table(TableCommand::Build { prior, epsilon, n_grid, delta, out }) => {
            apply_prior(&mut cfg, &prior);
            if epsilon.is_some() || n_grid.is_some() || delta.is_some() {
                cfg.table.epsilon = epsilon;
                cfg.table.n_grid = n_grid;
                cfg.table.delta = delta;
            }
            cfg.validate()?;
            commands::table_build(&cfg, &out)
        }
        Command::Table(TableCommand::Inspect { file, csv }) => commands::table_inspect(&file, csv.as_deref()),
        Command::Train { prior, c, epochs, seed, out } => {
            apply_prior(&mut cfg, &prior);
            apply_out(&mut cfg, &out);
            if let Some(c) = c {
                cfg.train.prior_scale_c = c;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.validate()?;
            commands::train(&cfg)
        }
        Command::Grid { out } => {
            apply_out(&mut cfg, &out);
            cfg.validate()?;
            commands::grid(&cfg)
        }
        Command::Prune { source, out } => {
            apply_out(&mut cfg, &out);
            cfg.validate()?;
            commands::prune(&cfg, source.checkpoint.as_deref())
        }
        Command::Kde { source, bandwidth, out } => {
            apply_out(&mut cfg, &out);
            if bandwidth.is_some() {
                cfg.analysis.kde_bandwidth = bandwidth;
            }
            cfg.validate()?;
            commands::kde(&cfg, source.checkpoint.as_deref())
        }
        Command::Geometry { prior, axis_radius, resolution, out } => {
            apply_prior(&mut cfg, &prior);
            apply_out(&mut cfg, &out);
            if let Some(r) = axis_radius {
                cfg.analysis.axis_radius = r;
            }
            if let Some(r) = resolution {
                cfg.analysis.resolution = r;
            }
            cfg.validate()?;
            commands::geometry(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
