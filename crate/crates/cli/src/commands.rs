use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use soft_diamond::analysis;
use soft_diamond::netcore::{checkpoint, Model};
use soft_diamond::prior_table::DerivTable;
use soft_diamond::stable;
use soft_diamond::trainer::{self, PriorGradient};

use crate::config::{PriorFamily, RunConfig};
use crate::error::CliError;
use crate::VERSION;

/// Structured record written next to every command's CSV outputs.
#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    /// Hex CRC32 of every derivative table used, in first-use order.
    table_checksums: Vec<String>,
    outputs: Vec<String>,
    summary: BTreeMap<String, f64>,
    config: &'a RunConfig,
}

struct OutputDir {
    path: PathBuf,
    outputs: Vec<String>,
}

impl OutputDir {
    fn create(cfg: &RunConfig) -> Result<Self, CliError> {
        let path = cfg
            .output_dir
            .clone()
            .ok_or_else(|| CliError::validation("output_dir: required (set it in the config or pass --out-dir)"))?;
        fs::create_dir_all(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        Ok(OutputDir { path, outputs: Vec::new() })
    }

    fn file(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let p = self.path.join(name);
        self.outputs.push(name.to_string());
        let f = File::create(&p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        Ok(BufWriter::new(f))
    }

    fn finish(
        self,
        command: &str,
        cfg: &RunConfig,
        checksums: &[u32],
        summary: BTreeMap<String, f64>,
    ) -> Result<(), CliError> {
        let mut seen = Vec::new();
        for c in checksums {
            let h = format!("{c:08x}");
            if !seen.contains(&h) {
                seen.push(h);
            }
        }
        let m = Manifest {
            command,
            version: VERSION,
            table_checksums: seen,
            outputs: self.outputs,
            summary,
            config: cfg,
        };
        let text = toml::to_string(&m).map_err(|e| CliError::Runtime(format!("manifest: {e}")))?;
        let p = self.path.join("manifest.toml");
        fs::write(&p, text).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        eprintln!("wrote {}", self.path.display());
        Ok(())
    }
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

pub fn density(cfg: &RunConfig, from: f64, to: f64, points: usize, out: Option<&Path>) -> Result<(), CliError> {
    if points == 0 {
        return Err(CliError::validation("points: must be >= 1"));
    }
    if !(from.is_finite() && to.is_finite()) || (points > 1 && !(from < to)) {
        return Err(CliError::validation(format!("from/to: [{from}, {to}] is not a finite increasing range")));
    }
    let params = cfg.prior.stable()?;
    let mut w = csv::Writer::from_writer(sink(out)?);
    w.write_record(["theta", "density"])?;
    for theta in analysis::linspace(from, to, points) {
        let h = stable::pdf(&params, theta, &cfg.quadrature)?;
        w.write_record([theta.to_string(), h.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn sample(cfg: &RunConfig, n: usize, seed: u64, out: Option<&Path>) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::validation("n: must be >= 1"));
    }
    let params = cfg.prior.stable()?;
    let mut w = csv::Writer::from_writer(sink(out)?);
    w.write_record(["index", "value"])?;
    for (i, x) in stable::sample(&params, n, seed).into_iter().enumerate() {
        w.write_record([i.to_string(), x.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn build_table(cfg: &RunConfig) -> Result<DerivTable, CliError> {
    let spec = cfg.table_spec()?;
    Ok(DerivTable::build(cfg.prior.stable()?, spec.epsilon, spec.n_grid, &spec.quadrature)?)
}

pub fn table_build(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    if cfg.prior.family != PriorFamily::Sas {
        return Err(CliError::validation("prior.family: tables exist only for the sas family"));
    }
    let table = build_table(cfg)?;
    let f = File::create(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    let mut w = BufWriter::new(f);
    table.write_to(&mut w)?;
    w.flush()?;
    println!("checksum = {:08x}", table.checksum());
    Ok(())
}

fn load_table(path: &Path) -> Result<DerivTable, CliError> {
    let f = File::open(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    DerivTable::read_from(io::BufReader::new(f)).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn table_inspect(file: &Path, csv_out: Option<&Path>) -> Result<(), CliError> {
    let table = load_table(file)?;
    let p = table.params();
    println!("alpha = {}", p.alpha());
    println!("gamma = {}", p.gamma());
    println!("mu = {}", p.mu());
    println!("epsilon = {}", table.epsilon());
    println!("n_grid = {}", table.n_grid());
    println!("delta = {}", table.delta());
    println!("prior_scale_c = {}", table.prior_scale_c());
    println!("checksum = {:08x}", table.checksum());
    let n = table.n_grid() as i64;
    println!("value_at_key_0 = {}", table.value_at_key(0));
    println!("value_at_key_min = {}", table.value_at_key(-n));
    println!("value_at_key_max = {}", table.value_at_key(n));
    if let Some(path) = csv_out {
        let mut w = csv::Writer::from_writer(sink(Some(path))?);
        w.write_record(["key", "theta", "value"])?;
        for k in -n..=n {
            w.write_record([k.to_string(), table.grid_point(k).to_string(), table.value_at_key(k).to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}

/// The prior derivative source the config asks for.
fn prior_gradient(cfg: &RunConfig) -> Result<PriorGradient, CliError> {
    Ok(match cfg.prior.family {
        PriorFamily::Uniform => PriorGradient::None,
        PriorFamily::Laplace => PriorGradient::Laplace { gamma: cfg.prior.gamma },
        PriorFamily::Sas => match &cfg.table.file {
            Some(path) => {
                let t = load_table(path)?;
                let want = cfg.prior.stable()?;
                if *t.params() != want {
                    return Err(CliError::validation(format!(
                        "table.file: {} holds alpha = {}, gamma = {}, mu = {} but [prior] asks for alpha = {}, gamma = {}, mu = {}",
                        path.display(),
                        t.params().alpha(),
                        t.params().gamma(),
                        t.params().mu(),
                        want.alpha(),
                        want.gamma(),
                        want.mu()
                    )));
                }
                PriorGradient::Table(t)
            }
            None => PriorGradient::Table(build_table(cfg)?),
        },
    })
}

struct Trained {
    model: Model,
    checksum: Option<u32>,
    report: trainer::TrainReport,
}

fn train_model(cfg: &RunConfig) -> Result<(Trained, soft_diamond::LabeledDataset), CliError> {
    let prior = prior_gradient(cfg)?;
    let (train_set, test_set) = cfg.data.load()?;
    let mut model = cfg.model.build(train_set.sample_shape(), train_set.classes(), cfg.train.seed)?;
    let report = trainer::train(&mut model, &train_set, Some(&test_set), &prior, &cfg.train)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok((Trained { model, checksum: prior.checksum(), report }, test_set))
}

/// A model to analyse: the checkpoint if given, otherwise one trained from
/// the config. Returns the test split as well.
fn model_for_analysis(
    cfg: &RunConfig,
    checkpoint_path: Option<&Path>,
) -> Result<(Model, Option<u32>, soft_diamond::LabeledDataset), CliError> {
    match checkpoint_path {
        Some(p) => {
            let f = File::open(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
            let model = checkpoint::read_from(io::BufReader::new(f))
                .map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
            let (_, test_set) = cfg.data.load()?;
            Ok((model, None, test_set))
        }
        None => {
            let (t, test_set) = train_model(cfg)?;
            Ok((t.model, t.checksum, test_set))
        }
    }
}

fn sparsity_summary(model: &Model, cfg: &RunConfig, summary: &mut BTreeMap<String, f64>) {
    let s = analysis::sparsity(model, cfg.analysis.sparsity_threshold);
    summary.insert("sparsity".into(), s.fraction);
    summary.insert("prior_weights".into(), s.total as f64);
    if let Some(k) = s.kurtosis {
        summary.insert("kurtosis".into(), k);
    }
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let mut dir = OutputDir::create(cfg)?;
    let (t, _) = train_model(cfg)?;
    t.report.write_csv(dir.file("train.csv")?)?;
    {
        let mut w = csv::Writer::from_writer(dir.file("weights.csv")?);
        w.write_record(["param", "layer", "role", "prior", "index", "value"])?;
        for (pi, p) in t.model.params().iter().enumerate() {
            for (k, v) in p.value.data().iter().enumerate() {
                w.write_record([
                    pi.to_string(),
                    p.layer.to_string(),
                    format!("{:?}", p.role).to_lowercase(),
                    p.prior.to_string(),
                    k.to_string(),
                    v.to_string(),
                ])?;
            }
        }
        w.flush()?;
    }
    {
        let mut w = dir.file("model.sdmc")?;
        checkpoint::write_to(&t.model, &mut w)?;
        w.flush()?;
    }
    let mut summary = BTreeMap::new();
    if let Some(a) = t.report.final_test_accuracy() {
        summary.insert("final_test_accuracy".into(), a);
        eprintln!("test accuracy {a:.4}");
    }
    summary.insert("warnings".into(), t.report.warnings.len() as f64);
    sparsity_summary(&t.model, cfg, &mut summary);
    dir.finish("train", cfg, &t.checksum.into_iter().collect::<Vec<_>>(), summary)
}

pub fn grid(cfg: &RunConfig) -> Result<(), CliError> {
    let mut dir = OutputDir::create(cfg)?;
    let tables = cfg.table_spec()?;
    let (train_set, test_set) = cfg.data.load()?;
    let (shape, classes) = (train_set.sample_shape().to_vec(), train_set.classes());
    let make = |seed: u64| cfg.model.build(&shape, classes, seed);
    let rows = trainer::run_experiment_grid(&cfg.train, &cfg.grid, &tables, &train_set, &test_set, &make);
    trainer::write_grid_csv(&rows, dir.file("grid.csv")?)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    for r in rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("cell {} c={} seed={:?} failed: {}", r.prior.label(), r.c, r.seed, r.error.as_deref().unwrap_or(""));
    }
    let checksums: Vec<u32> = rows.iter().filter_map(|r| r.table_checksum).collect();
    let mut summary = BTreeMap::new();
    summary.insert("cells".into(), rows.len() as f64);
    summary.insert("failed_cells".into(), failed as f64);
    dir.finish("grid", cfg, &checksums, summary)
}

pub fn prune(cfg: &RunConfig, checkpoint_path: Option<&Path>) -> Result<(), CliError> {
    let mut dir = OutputDir::create(cfg)?;
    let (model, checksum, test_set) = model_for_analysis(cfg, checkpoint_path)?;
    let curve = analysis::prune_curve(&model, &cfg.analysis.prune_fractions, &test_set)?;
    analysis::write_prune_csv(&curve, dir.file("prune.csv")?)?;
    let mut summary = BTreeMap::new();
    if let Some(&(_, a)) = curve.iter().find(|(f, _)| *f == 0.0) {
        summary.insert("unpruned_accuracy".into(), a);
    }
    sparsity_summary(&model, cfg, &mut summary);
    dir.finish("prune", cfg, &checksum.into_iter().collect::<Vec<_>>(), summary)
}

pub fn kde(cfg: &RunConfig, checkpoint_path: Option<&Path>) -> Result<(), CliError> {
    let mut dir = OutputDir::create(cfg)?;
    let (model, checksum, _) = model_for_analysis(cfg, checkpoint_path)?;
    let weights = analysis::masked_weights(&model);
    let bw = match cfg.analysis.kde_bandwidth {
        Some(b) => b,
        None => analysis::silverman_bandwidth(&weights),
    };
    if !(bw > 0.0 && bw.is_finite()) {
        return Err(CliError::Runtime(format!("degenerate weight spread gives bandwidth {bw}")));
    }
    let [lo, hi] = cfg.analysis.kde_range.unwrap_or_else(|| {
        let (mn, mx) = weights.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &w| (a.min(w), b.max(w)));
        [mn - 3.0 * bw, mx + 3.0 * bw]
    });
    let grid = analysis::linspace(lo, hi, cfg.analysis.kde_points);
    let density = analysis::kde(&weights, bw, &grid)?;
    analysis::write_kde_csv(&grid, &density, dir.file("kde.csv")?)?;
    let mut summary = BTreeMap::new();
    summary.insert("bandwidth".into(), bw);
    summary.insert("grid_mass".into(), analysis::trapezoid(&grid, &density));
    sparsity_summary(&model, cfg, &mut summary);
    dir.finish("kde", cfg, &checksum.into_iter().collect::<Vec<_>>(), summary)
}

pub fn geometry(cfg: &RunConfig) -> Result<(), CliError> {
    let mut dir = OutputDir::create(cfg)?;
    let params = cfg.prior.stable()?;
    let quad = &cfg.quadrature;
    let a = &cfg.analysis;
    let kappa = analysis::kappa_for_axis_radius(&params, a.axis_radius, quad)?;
    let contour = analysis::constraint_contour(&params, kappa, a.resolution, quad)?;
    analysis::write_contour_csv(&contour, dir.file("contour.csv")?)?;
    let radii: Vec<f64> = contour.points.iter().map(|p| p.radius()).collect();
    let (rmin, rmax) = radii.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &r| (lo.min(r), hi.max(r)));
    let mut summary = BTreeMap::new();
    summary.insert("kappa".into(), kappa);
    summary.insert("diagonal_axis_ratio".into(), analysis::diagonal_axis_ratio(&params, a.axis_radius, quad)?);
    summary.insert("min_radius".into(), rmin);
    summary.insert("max_radius".into(), rmax);
    let toy = analysis::toy_lse_solve(&a.objective, &params, kappa, quad)?;
    summary.insert("toy_theta1".into(), toy[0]);
    summary.insert("toy_theta2".into(), toy[1]);
    dir.finish("geometry", cfg, &[], summary)
}
