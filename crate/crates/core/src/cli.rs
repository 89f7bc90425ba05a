//! `fusegp` command-line front end.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dataset::{load_csv, Dataset, Property, Validation};
use crate::error::{Error, Result};
use crate::eval::{self, CvConfig, CvReport, FUSED_LABEL};
use crate::hyperopt::OptimizerConfig;
use crate::model::{fit_dataset, FitSpec, Model, ModelKind};
use crate::numfmt::g6;
use crate::porescan::{self, ScanConfig};

#[derive(Debug, Parser)]
#[command(name = "fusegp", version, about = "Gaussian-process process-property models for LPBF data")]
pub struct Cli {
    /// JSON file with default option values; command-line flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write it with its lengthscale table.
    Fit(ModelArgs),
    /// k-fold cross-validation RMSE table.
    Cv(CvArgs),
    /// Pearson/Spearman tables and VED scatter data for two materials.
    Correlate(CorrelateArgs),
    /// Posterior along one feature with the others held at their medians.
    Marginal(MarginalArgs),
    /// Porosity statistics from micrograph images.
    Porescan(PorescanArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindArg {
    Sogp,
    Mtgp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropertyArg {
    Phi,
    Hv,
    Both,
}

impl PropertyArg {
    fn properties(self) -> Vec<Property> {
        match self {
            PropertyArg::Phi => vec![Property::Phi],
            PropertyArg::Hv => vec![Property::Hv],
            PropertyArg::Both => Property::ALL.to_vec(),
        }
    }
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Sogp => ModelKind::Sogp,
            KindArg::Mtgp => ModelKind::Mtgp,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Process-property CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Second CSV, typically the other material.
    #[arg(long)]
    pub data_b: Option<PathBuf>,
    /// Skip range checks on process parameters and responses.
    #[arg(long)]
    pub no_validate: bool,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub model: Option<KindArg>,
    /// Train one model on both materials with a latent source input.
    #[arg(long)]
    pub fuse: bool,
    #[arg(long, value_enum)]
    pub property: Option<PropertyArg>,
    #[arg(long, env = "FUSEGP_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Also write the optimizer restart trace as JSON.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub k: Option<usize>,
    /// Run SOGP and MTGP, single-material and fused, on both properties.
    #[arg(long)]
    pub all_configs: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CorrelateArgs {
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Clone, Args)]
pub struct MarginalArgs {
    /// Model JSON written by `fit`.
    pub model_path: PathBuf,
    #[arg(long)]
    pub feature: Option<String>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PorescanArgs {
    /// Image file or directory of PGM/PNG images.
    pub input: PathBuf,
    /// Treat bright pixels as pores.
    #[arg(long)]
    pub invert: bool,
    #[arg(long)]
    pub dilate_radius: Option<usize>,
    #[arg(long)]
    pub margin: Option<usize>,
    /// Write each label image as a graymap under `labels/`.
    #[arg(long)]
    pub dump_labels: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Option defaults loadable from `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub data: Option<PathBuf>,
    pub data_b: Option<PathBuf>,
    pub model: Option<KindArg>,
    pub fuse: Option<bool>,
    pub property: Option<PropertyArg>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub restarts: Option<usize>,
    pub max_iters: Option<usize>,
    pub out: Option<PathBuf>,
    pub trace: Option<bool>,
    pub invert: Option<bool>,
    pub dilate_radius: Option<usize>,
    pub margin: Option<usize>,
    pub no_validate: Option<bool>,
    pub feature: Option<String>,
    pub grid: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Fully resolved settings for `fit` and `cv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub data: Vec<PathBuf>,
    pub model: ModelKind,
    pub fused: bool,
    pub properties: Vec<Property>,
    pub k: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub out: PathBuf,
    pub trace: bool,
    pub validate: bool,
}

pub const DEFAULT_OUT: &str = "fusegp-out";
pub const DEFAULT_K: usize = 5;
pub const DEFAULT_GRID: usize = 50;

impl RunConfig {
    fn resolve(command: &str, args: &ModelArgs, k: Option<usize>, file: &ConfigFile) -> Result<Self> {
        let d = &args.data;
        let data: Vec<PathBuf> = [d.data.clone().or(file.data.clone()), d.data_b.clone().or(file.data_b.clone())]
            .into_iter()
            .flatten()
            .collect();
        if data.is_empty() {
            return Err(Error::InvalidArgument("--data is required".into()));
        }
        let mut optimizer = OptimizerConfig::default();
        if let Some(r) = args.restarts.or(file.restarts) {
            optimizer.n_restarts = r;
        }
        if let Some(m) = file.max_iters {
            optimizer.max_iters = m;
        }
        let seed = args.seed.or(file.seed).unwrap_or(0);
        optimizer.seed = seed;
        let cfg = Self {
            command: command.to_string(),
            data,
            model: args.model.or(file.model).unwrap_or(KindArg::Sogp).into(),
            fused: args.fuse || file.fuse.unwrap_or(false),
            properties: args.property.or(file.property).unwrap_or(PropertyArg::Both).properties(),
            k: k.or(file.k).unwrap_or(DEFAULT_K),
            seed,
            optimizer,
            out: d.out.clone().or(file.out.clone()).unwrap_or_else(|| DEFAULT_OUT.into()),
            trace: args.trace || file.trace.unwrap_or(false),
            validate: !(d.no_validate || file.no_validate.unwrap_or(false)),
        };
        cfg.fit_spec().validate()?;
        Ok(cfg)
    }

    fn fit_spec(&self) -> FitSpec {
        FitSpec {
            kind: self.model,
            fused: self.fused,
            properties: self.properties.clone(),
            optimizer: self.optimizer.clone(),
        }
    }

    fn validation(&self) -> Validation {
        if self.validate {
            Validation::default()
        } else {
            Validation::disabled()
        }
    }

    fn load(&self) -> Result<Dataset> {
        load_all(&self.data, &self.validation())
    }
}

fn load_all(paths: &[PathBuf], validation: &Validation) -> Result<Dataset> {
    let mut it = paths.iter();
    let first = it.next().ok_or_else(|| Error::InvalidArgument("--data is required".into()))?;
    let mut d = load_csv(first, validation)?;
    for p in it {
        d = d.concat(&load_csv(p, validation)?)?;
    }
    Ok(d)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_file(path, buf)
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn model_label(kind: ModelKind, property: Option<Property>) -> String {
    match property {
        Some(p) => format!("{} {}", kind.label(), p),
        None => kind.label().to_string(),
    }
}

fn train_label(fused: bool, dataset: &Dataset) -> String {
    if fused {
        FUSED_LABEL.to_string()
    } else {
        dataset.sources().join("+")
    }
}

/// `fit`: model JSON per fitted model plus a Table 4-style lengthscale CSV.
pub fn cmd_fit(cfg: &RunConfig) -> Result<String> {
    let data = cfg.load()?;
    let fitted = fit_dataset(&data, &cfg.fit_spec(), None)?;
    create_dir(&cfg.out)?;
    let train = train_label(cfg.fused, &data);
    let mut rows = Vec::new();
    let mut out = String::new();
    for (i, f) in fitted.iter().enumerate() {
        let (prop, stem) = match f.model.kind() {
            ModelKind::Sogp => (Some(cfg.properties[i]), format!("model_{}", cfg.properties[i])),
            ModelKind::Mtgp => (None, "model".to_string()),
        };
        f.model.save(cfg.out.join(format!("{stem}.json")))?;
        if cfg.trace {
            write_file(&cfg.out.join(format!("{stem}_trace.json")), json(&f.trace)?)?;
        }
        let rep = eval::lengthscale_report(&f.model);
        let label = model_label(f.model.kind(), prop);
        let _ = writeln!(
            out,
            "{label} [{train}]: nll {} restart {} of {}",
            g6(f.model.nll()),
            f.trace.best_restart,
            f.trace.trace.len()
        );
        let omegas: Vec<String> = rep
            .features
            .iter()
            .chain(rep.source.as_ref())
            .map(|e| format!("{}={}", e.name, g6(e.omega)))
            .collect();
        let _ = writeln!(out, "  omega: {}", omegas.join(" "));
        let _ = writeln!(out, "  ranking: {}", rep.ranking.join(" > "));
        if let Model::Multi(m) = &f.model {
            let _ = writeln!(out, "  task correlation: {}", g6(m.task_correlation()));
        }
        rows.push((label, train.clone(), rep));
    }
    write_with(&cfg.out.join("lengthscales.csv"), |b| eval::write_lengthscale_csv(&rows, b))?;
    let reports: Vec<_> = rows.iter().map(|(m, t, r)| serde_json::json!({"model": m, "train": t, "report": r})).collect();
    write_file(&cfg.out.join("lengthscales.json"), json(&reports)?)?;
    Ok(out)
}

/// The Table 3 grid: SOGP and MTGP, each single-material and fused.
pub fn all_configs(cfg: &RunConfig) -> Vec<CvConfig> {
    [ModelKind::Sogp, ModelKind::Mtgp]
        .into_iter()
        .flat_map(|kind| {
            [false, true].into_iter().map(move |fused| CvConfig {
                kind,
                fused,
                properties: Property::ALL.to_vec(),
                k: cfg.k,
                seed: cfg.seed,
                optimizer: cfg.optimizer.clone(),
            })
        })
        .collect()
}

/// `cv`: Table 3-style CSV, per-fold long CSV and a JSON report.
pub fn cmd_cv(cfg: &RunConfig, all: bool) -> Result<String> {
    let data = cfg.load()?;
    let configs = if all {
        all_configs(cfg)
    } else {
        vec![CvConfig {
            kind: cfg.model,
            fused: cfg.fused,
            properties: cfg.properties.clone(),
            k: cfg.k,
            seed: cfg.seed,
            optimizer: cfg.optimizer.clone(),
        }]
    };
    let reports: Vec<CvReport> = configs.iter().map(|c| eval::run_cv(&data, c)).collect::<Result<_>>()?;
    create_dir(&cfg.out)?;
    write_with(&cfg.out.join("cv_table.csv"), |b| eval::write_table_csv(&reports, b))?;
    write_with(&cfg.out.join("cv_folds.csv"), |b| eval::write_folds_csv(&reports, b))?;
    write_file(&cfg.out.join("cv_report.json"), json(&reports)?)?;

    let mut out = format!("{:<6} {:<12} {:<12} {:>12} {:>12}\n", "model", "train", "test", "phi_rmse", "hv_rmse");
    for rep in &reports {
        for row in &rep.rows {
            let cell = |p: Property| rep.mean_rmse(&row.test, p).map_or_else(|| "-".into(), g6);
            let _ = writeln!(
                out,
                "{:<6} {:<12} {:<12} {:>12} {:>12}",
                rep.model.label(),
                row.train,
                row.test,
                cell(Property::Phi),
                cell(Property::Hv)
            );
        }
    }
    Ok(out)
}

/// `correlate`: long-format correlation CSV, JSON tables and VED scatter.
pub fn cmd_correlate(a: &Path, b: &Path, validation: &Validation, out_dir: &Path) -> Result<String> {
    let da = load_csv(a, validation)?;
    let db = load_csv(b, validation)?;
    let table = eval::correlation_table(&da, &db)?;
    let scatter = eval::ved_scatter(&[&da, &db])?;
    create_dir(out_dir)?;
    write_with(&out_dir.join("correlation.csv"), |w| table.write_csv(w))?;
    write_file(&out_dir.join("correlation.json"), json(&table)?)?;
    write_with(&out_dir.join("ved_scatter.csv"), |w| eval::write_ved_csv(&scatter, w))?;

    let mut out = String::new();
    for (name, m) in [("Pearson", &table.pearson), ("Spearman", &table.spearman)] {
        let _ = writeln!(out, "{name} (n = {})", table.n);
        let _ = write!(out, "{:>12}", "");
        for l in &table.labels {
            let _ = write!(out, " {l:>12}");
        }
        out.push('\n');
        for (i, l) in table.labels.iter().enumerate() {
            let _ = write!(out, "{l:>12}");
            for j in 0..table.labels.len() {
                let _ = write!(out, " {:>12}", g6(m[(i, j)]));
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// `marginal`: sweep CSV (one row per grid point and source) and JSON.
pub fn cmd_marginal(model_path: &Path, feature: &str, grid: usize, out_dir: &Path) -> Result<String> {
    let model = Model::load(model_path)?;
    let sweep = eval::marginal_sweep(&model, feature, grid)?;
    create_dir(out_dir)?;
    write_with(&out_dir.join(format!("marginal_{feature}.csv")), |w| sweep.write_csv(w))?;
    write_file(&out_dir.join(format!("marginal_{feature}.json")), json(&sweep)?)?;
    Ok(format!(
        "{} points over {feature} in [{}, {}]\n",
        sweep.points.len(),
        g6(sweep.grid.first().copied().unwrap_or(f64::NAN)),
        g6(sweep.grid.last().copied().unwrap_or(f64::NAN))
    ))
}

/// `porescan`: per-pore CSV, per-file summary CSV and JSON aggregates.
/// In directory mode unreadable files are reported and skipped.
pub fn cmd_porescan(input: &Path, cfg: &ScanConfig, dump_labels: bool, out_dir: &Path) -> Result<String> {
    let batch = input.is_dir();
    let files = porescan::collect_inputs(input)?;
    let scans = porescan::scan_files(&files, cfg);
    if !batch {
        if let Some(e) = scans.iter().find_map(|s| s.error.clone()) {
            return Err(Error::Image(e));
        }
    }
    create_dir(out_dir)?;
    write_with(&out_dir.join("pores.csv"), |w| porescan::write_pores_csv(&scans, w))?;
    write_with(&out_dir.join("porescan_summary.csv"), |w| porescan::write_summary_csv(&scans, w))?;
    write_file(&out_dir.join("porescan.json"), json(&scans)?)?;
    if dump_labels {
        let dir = out_dir.join("labels");
        create_dir(&dir)?;
        for s in &scans {
            if let Some(l) = &s.labels {
                let stem = Path::new(&s.file).file_stem().map_or_else(|| s.file.clone(), |x| x.to_string_lossy().into_owned());
                porescan::save_gray(&porescan::label_image_gray(l), dir.join(format!("{stem}.pgm")))?;
            }
        }
    }
    let mut out = String::new();
    for s in &scans {
        match (&s.stats, &s.error) {
            (Some(st), _) => {
                let _ = writeln!(
                    out,
                    "{}: {} pores, phi {}%, mean radius {} px",
                    s.file,
                    st.count,
                    g6(st.porosity_pct),
                    g6(st.mean_radius)
                );
            }
            (None, Some(e)) => {
                let _ = writeln!(out, "{}: error: {e}", s.file);
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<String> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    match &cli.command {
        Command::Fit(args) => cmd_fit(&RunConfig::resolve("fit", args, None, &file)?),
        Command::Cv(args) => {
            let cfg = RunConfig::resolve("cv", &args.model, args.k, &file)?;
            cmd_cv(&cfg, args.all_configs)
        }
        Command::Correlate(args) => {
            let a = args.data.data.clone().or(file.data.clone());
            let b = args.data.data_b.clone().or(file.data_b.clone());
            let (Some(a), Some(b)) = (a, b) else {
                return Err(Error::InvalidArgument("correlate needs --data and --data-b".into()));
            };
            let validation = if args.data.no_validate || file.no_validate.unwrap_or(false) {
                Validation::disabled()
            } else {
                Validation::default()
            };
            let out = args.data.out.clone().or(file.out.clone()).unwrap_or_else(|| DEFAULT_OUT.into());
            cmd_correlate(&a, &b, &validation, &out)
        }
        Command::Marginal(args) => {
            let feature = args
                .feature
                .clone()
                .or(file.feature.clone())
                .ok_or_else(|| Error::InvalidArgument("marginal needs --feature".into()))?;
            let grid = args.grid.or(file.grid).unwrap_or(DEFAULT_GRID);
            let out = args.out.clone().or(file.out.clone()).unwrap_or_else(|| DEFAULT_OUT.into());
            cmd_marginal(&args.model_path, &feature, grid, &out)
        }
        Command::Porescan(args) => {
            let defaults = ScanConfig::default();
            let cfg = ScanConfig {
                margin: args.margin.or(file.margin).unwrap_or(defaults.margin),
                dilate_radius: args.dilate_radius.or(file.dilate_radius).unwrap_or(defaults.dilate_radius),
                invert: args.invert || file.invert.unwrap_or(false),
            };
            let out = args.out.clone().or(file.out.clone()).unwrap_or_else(|| DEFAULT_OUT.into());
            cmd_porescan(&args.input, &cfg, args.dump_labels, &out)
        }
    }
}
