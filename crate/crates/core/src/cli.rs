//! Command-line interface: `simulate`, `fit`, `risk`, `sweep`, `import` and
//! `report`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{truth_digest, RunConfig};
use crate::datafile::{import_long_csv, read_dataset, write_dataset, DatasetHeader, ImportOptions};
use crate::dnn::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
use crate::error::Error;
use crate::estimator::{fit_estimator, train_loss, unknown_estimator, FittedModel, ESTIMATOR_NAMES};
use crate::field::CovarianceField;
use crate::postrisk::{l2_risk, psd_project, to_grid, GridField, GridHeader, RiskMethod};
use crate::rng::SeedSpec;
use crate::spectral::SpectralExport;
use crate::sweep::{run_plan, write_report};
use crate::synth::generate_dataset;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub const THREADS_ENV: &str = "COVFIELD_THREADS";

const DEFAULT_PSD_GRID: usize = 33;

#[derive(Debug, Parser)]
#[command(name = "covfield", version, about = "Pairwise least-squares covariance estimation")]
pub struct Cli {
    /// Worker threads (overridden by COVFIELD_THREADS; default: logical cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset from the configured truth.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output file (default: <output_dir>/dataset.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit one estimator to a dataset.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// One of dnn, loclin, spectral.
        #[arg(long)]
        estimator: String,
        /// Output directory (default: <output_dir>).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Squared L2 risk of a fitted model against the configured truth.
    Risk {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Also write the JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configured sweep and write the report files.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Convert a long-format CSV (one row per measurement) to a dataset.
    Import {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value = "subject")]
        subject_col: String,
        /// Comma-separated location columns.
        #[arg(long, default_value = "t", value_delimiter = ',')]
        t_cols: Vec<String>,
        #[arg(long, default_value = "y")]
        y_col: String,
        /// Map each coordinate's range onto [0, 1].
        #[arg(long)]
        rescale: bool,
        /// Truncate subjects to the smallest measurement count.
        #[arg(long)]
        subsample_to_min: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a sweep directory as text tables.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    fn data(message: impl Into<String>) -> Self {
        Self { code: EXIT_DATA, message: message.into() }
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::InvalidInput(_) | Error::OracleLimit(_) => EXIT_CONFIG,
        Error::TooFewMeasurements
        | Error::InvalidPermutation { .. }
        | Error::LoclinDimension
        | Error::DimensionMismatch { .. }
        | Error::Format(_)
        | Error::Io(_)
        | Error::Json(_) => EXIT_DATA,
        Error::NotPsd
        | Error::NumericalOverflow
        | Error::Divergence { .. }
        | Error::InsufficientLocalData
        | Error::RankDeficient
        | Error::Eigen
        | Error::BandwidthSelection => EXIT_NUMERIC,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self { code: exit_code(&e), message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Output goes to `stdout`; diagnostics to `stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(stdout, "{text}");
            } else {
                let _ = write!(stderr, "{text}");
            }
            return code;
        }
    };
    if let Err(e) = configure_threads(cli.threads) {
        let _ = writeln!(stderr, "error: {}", e.message);
        return e.code;
    }
    match dispatch(cli.command, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message);
            e.code
        }
    }
}

fn configure_threads(flag: Option<usize>) -> CliResult<()> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| CliError::config(format!("{THREADS_ENV} must be a positive integer")))?),
        Err(_) => flag,
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::config("thread count must be positive"));
        }
        // A pool already exists when run() is called repeatedly in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn dispatch(cmd: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<()> {
    match cmd {
        Command::Simulate { config, out } => cmd_simulate(&config, out.as_deref(), stdout),
        Command::Fit { config, data, estimator, out_dir } => cmd_fit(&config, &data, &estimator, out_dir.as_deref(), stdout),
        Command::Risk { model, config, out } => cmd_risk(&model, &config, out.as_deref(), stdout),
        Command::Sweep { config, out_dir } => cmd_sweep(&config, out_dir.as_deref(), stdout),
        Command::Import { csv, subject_col, t_cols, y_col, rescale, subsample_to_min, out } => {
            let opts = ImportOptions {
                subject_column: subject_col,
                location_columns: t_cols,
                value_column: y_col,
                rescale,
                subsample_to_min,
            };
            cmd_import(&csv, &opts, &out, stdout, stderr)
        }
        Command::Report { dir } => cmd_report(&dir, stdout),
    }
}

fn output_path(explicit: Option<&Path>, cfg: &RunConfig, default_name: &str) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from(".")).join(default_name),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::data(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))
}

fn cmd_simulate(config: &Path, out: Option<&Path>, stdout: &mut dyn Write) -> CliResult<()> {
    let cfg = RunConfig::load(config)?;
    let truth = cfg.truth_spec()?;
    let data = generate_dataset(&truth, cfg.data.n, cfg.data.m, cfg.data.noise, cfg.seed)?;
    let mut header = DatasetHeader::new(&data);
    header.seed = Some(cfg.seed.master);
    header.truth_digest = Some(truth_digest(&truth));
    let path = output_path(out, &cfg, "dataset.jsonl");
    write_file(&path, write_dataset(&header, &data).as_bytes())?;
    let _ = writeln!(stdout, "wrote {}", path.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FitMetrics {
    pub estimator: String,
    pub tuning: String,
    pub train_loss: f64,
    pub wall_time: f64,
    pub model: String,
}

fn cmd_fit(config: &Path, data_path: &Path, name: &str, out_dir: Option<&Path>, stdout: &mut dyn Write) -> CliResult<()> {
    let cfg = RunConfig::load(config)?;
    if !ESTIMATOR_NAMES.contains(&name) {
        return Err(CliError::config(unknown_estimator(name).to_string()));
    }
    let spec = cfg.estimator(name)?;
    let (_, data) = read_dataset(&read_text(data_path)?)?;
    let dir = output_path(out_dir, &cfg, "");
    let start = Instant::now();
    let model = fit_estimator(&spec, &data, fit_seed(&cfg))?;
    let wall_time = start.elapsed().as_secs_f64();
    let loss = train_loss(&model, &data)?;
    let model_path = match &model {
        FittedModel::Spectral { fit, field } => {
            let mut export = fit.export();
            export.bound = Some(field.bound());
            let path = dir.join("model.json");
            write_file(&path, (serde_json::to_string_pretty(&export).map_err(Error::from)? + "\n").as_bytes())?;
            path
        }
        FittedModel::Loclin { field } => {
            let grid = field.to_grid_field();
            let mut header = grid.export();
            header.values_csv = Some("model.csv".into());
            write_file(&dir.join("model.csv"), grid.to_csv().as_bytes())?;
            let path = dir.join("model.json");
            write_file(&path, (serde_json::to_string_pretty(&header).map_err(Error::from)? + "\n").as_bytes())?;
            path
        }
        FittedModel::Dnn { field, .. } => {
            let mut bytes = Vec::new();
            write_checkpoint(field, &mut bytes)?;
            let path = dir.join("model.ckpt");
            write_file(&path, &bytes)?;
            path
        }
    };
    let metrics = FitMetrics {
        estimator: name.to_string(),
        tuning: model.tuning(),
        train_loss: loss,
        wall_time,
        model: model_path.display().to_string(),
    };
    let line = serde_json::to_string(&metrics).map_err(Error::from)?;
    write_file(&dir.join("metrics.json"), (line.clone() + "\n").as_bytes())?;
    let _ = writeln!(stdout, "{line}");
    Ok(())
}

/// A fitted model loaded from disk.
pub fn load_model(path: &Path) -> CliResult<Box<dyn CovarianceField + Send + Sync>> {
    let bytes = fs::read(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    if bytes.starts_with(&CHECKPOINT_MAGIC) {
        return Ok(Box::new(read_checkpoint(bytes.as_slice())?));
    }
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| CliError::data(format!("{}: not a model file: {e}", path.display())))?;
    match value.get("kind").and_then(|k| k.as_str()) {
        Some("spectral") => {
            let export: SpectralExport = serde_json::from_value(value).map_err(|e| CliError::data(e.to_string()))?;
            Ok(Box::new(export.field(f64::INFINITY)?))
        }
        Some("grid") => {
            let header: GridHeader = serde_json::from_value(value).map_err(|e| CliError::data(e.to_string()))?;
            let csv_name = header.values_csv.clone().ok_or_else(|| CliError::data("grid header lacks values_csv"))?;
            let csv_path = path.parent().unwrap_or(Path::new(".")).join(csv_name);
            Ok(Box::new(GridField::from_csv(&header, &read_text(&csv_path)?)?))
        }
        _ => Err(CliError::data(format!("{}: unknown model kind", path.display()))),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RiskReport {
    pub risk_raw: f64,
    pub risk_psd: f64,
    pub method: RiskMethod,
    pub nodes: usize,
    /// Mean squared difference to the truth over the projection grid, before
    /// and after projection.
    pub grid_risk_raw: f64,
    pub grid_risk_psd: f64,
    pub psd_grid: usize,
}

fn grid_mse(a: &GridField, b: &GridField) -> f64 {
    let diff = a.values() - b.values();
    diff.norm_squared() / diff.len() as f64
}

fn cmd_risk(model_path: &Path, config: &Path, out: Option<&Path>, stdout: &mut dyn Write) -> CliResult<()> {
    let cfg = RunConfig::load(config)?;
    let truth = cfg.truth_spec()?;
    let model = load_model(model_path)?;
    let d = truth.dim();
    if model.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, found: model.dim() }.into());
    }
    let raw = l2_risk(model.as_ref(), &truth.field(), d, cfg.risk.nodes)?;
    let g = cfg.risk.psd_grid.unwrap_or(DEFAULT_PSD_GRID);
    let model_grid = to_grid(model.as_ref(), g, d)?;
    let projected = psd_project(&model_grid)?;
    let truth_grid = to_grid(&truth.field(), g, d)?;
    let psd = l2_risk(&projected, &truth.field(), d, cfg.risk.nodes)?;
    let report = RiskReport {
        risk_raw: raw.value,
        risk_psd: psd.value,
        method: raw.method,
        nodes: raw.nodes,
        grid_risk_raw: grid_mse(&model_grid, &truth_grid),
        grid_risk_psd: grid_mse(&projected, &truth_grid),
        psd_grid: g,
    };
    let line = serde_json::to_string(&report).map_err(Error::from)?;
    if let Some(p) = out {
        write_file(p, (line.clone() + "\n").as_bytes())?;
    }
    let _ = writeln!(stdout, "{line}");
    Ok(())
}

fn cmd_sweep(config: &Path, out_dir: Option<&Path>, stdout: &mut dyn Write) -> CliResult<()> {
    let cfg = RunConfig::load(config)?;
    let plan = cfg.plan()?;
    let dir = output_path(out_dir, &cfg, "");
    fs::create_dir_all(&dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
    let probe = dir.join(".covfield-write-test");
    fs::write(&probe, b"").map_err(|e| CliError::data(format!("output directory {} is not writable: {e}", dir.display())))?;
    let _ = fs::remove_file(&probe);
    let report = run_plan(&plan)?;
    write_report(&report, &dir)?;
    let failed = report.rows.iter().filter(|r| r.error.is_some()).count();
    let _ = writeln!(stdout, "wrote {} rows ({failed} failed) to {}", report.rows.len(), dir.display());
    Ok(())
}

fn cmd_import(csv: &Path, opts: &ImportOptions, out: &Path, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<()> {
    let outcome = import_long_csv(&read_text(csv)?, opts)?;
    if !outcome.truncated.is_empty() {
        let _ = writeln!(
            stderr,
            "warning: truncated to m = {} for subjects: {}",
            outcome.data.m(),
            outcome.truncated.join(", ")
        );
    }
    write_file(out, write_dataset(&outcome.header, &outcome.data).as_bytes())?;
    let _ = writeln!(stdout, "wrote {} subjects x {} measurements to {}", outcome.data.n(), outcome.data.m(), out.display());
    Ok(())
}

fn cmd_report(dir: &Path, stdout: &mut dyn Write) -> CliResult<()> {
    let summary = read_text(&dir.join("summary.csv"))?;
    let slopes: serde_json::Value =
        serde_json::from_str(&read_text(&dir.join("slopes.json"))?).map_err(|e| CliError::data(e.to_string()))?;
    let transitions: serde_json::Value =
        serde_json::from_str(&read_text(&dir.join("transitions.json"))?).map_err(|e| CliError::data(e.to_string()))?;

    let mut out = String::new();
    out.push_str("median risk by cell\n");
    out.push_str(&format!("{:<12} {:>6} {:>6} {:>4} {:>14} {:>14}\n", "estimator", "n", "m", "ok", "raw", "psd"));
    let mut rdr = csv::Reader::from_reader(summary.as_bytes());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::data(e.to_string()))?;
        let cell = |k: usize| rec.get(k).unwrap_or("").to_string();
        let fmt = |s: String| s.parse::<f64>().map(|v| format!("{v:.6e}")).unwrap_or_else(|_| "-".into());
        out.push_str(&format!(
            "{:<12} {:>6} {:>6} {:>4} {:>14} {:>14}\n",
            cell(0),
            cell(1),
            cell(2),
            cell(3),
            fmt(cell(4)),
            fmt(cell(5))
        ));
    }
    out.push_str("\nslopes in n (fixed m)\n");
    for s in slopes["slopes"].as_array().into_iter().flatten() {
        out.push_str(&format!(
            "{:<12} m={:<5} slope {:>8.4} +/- {:.4}  predicted {}\n",
            s["estimator"].as_str().unwrap_or("?"),
            s["m"],
            s["slope"].as_f64().unwrap_or(f64::NAN),
            s["stderr"].as_f64().unwrap_or(f64::NAN),
            s["predicted_slope"].as_f64().map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
        ));
    }
    out.push_str("\nbreakpoints in m (fixed n)\n");
    for t in transitions["transitions"].as_array().into_iter().flatten() {
        out.push_str(&format!(
            "{:<12} n={:<5} m* {:>8.2} (predicted {:.2})  slopes {:.4} -> {:.4}\n",
            t["estimator"].as_str().unwrap_or("?"),
            t["n"],
            t["m_star"].as_f64().unwrap_or(f64::NAN),
            t["predicted_m_star"].as_f64().unwrap_or(f64::NAN),
            t["pre_slope"].as_f64().unwrap_or(f64::NAN),
            t["post_slope"].as_f64().unwrap_or(f64::NAN),
        ));
    }
    let _ = write!(stdout, "{out}");
    Ok(())
}

/// Seed used by `fit` for a config's master seed.
pub fn fit_seed(cfg: &RunConfig) -> SeedSpec {
    cfg.seed.child("fit", 0)
}
