//! Experiment grids over `(n, m)` with replicates, log-log slope fits and
//! sparse/dense breakpoint detection.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{FunctionalDataset, NoiseSpec};
use crate::dnn::Regime;
use crate::error::{Error, Result};
use crate::estimator::{fit_estimator, train_loss, ArchChoice, EstimatorSpec, FittedModel};
use crate::field::CovarianceField;
use crate::numeric::median;
use crate::postrisk::{l2_risk, psd_project, to_grid, DEFAULT_GL_NODES};
use crate::rng::SeedSpec;
use crate::synth::{generate_dataset, TruthSpec};

fn default_nodes() -> usize {
    DEFAULT_GL_NODES
}

fn default_psd_grid() -> Option<usize> {
    Some(33)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskConfig {
    /// Gauss–Legendre nodes per axis; QMC uses `nodes^2` points.
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    /// Grid size for the projected risk; `None` skips it.
    #[serde(default = "default_psd_grid")]
    pub psd_grid: Option<usize>,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self { nodes: default_nodes(), psd_grid: default_psd_grid() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConfig {
    /// Effective smoothness for the breakpoint prediction `n^(1/beta)`.
    /// Defaults to `2 alpha` for tensor truths and 2 otherwise.
    #[serde(default)]
    pub beta_tilde: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub truth: TruthSpec,
    pub noise: NoiseSpec,
    pub estimators: Vec<EstimatorSpec>,
    pub n_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
    pub replicates: usize,
    pub seed: SeedSpec,
    #[serde(default)]
    pub risk: RiskConfig,
    #[serde(default)]
    pub theory: TheoryConfig,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.into()));
        if self.n_grid.is_empty() || self.m_grid.is_empty() {
            return bad("n_grid and m_grid must be nonempty");
        }
        if self.n_grid.contains(&0) {
            return bad("n_grid entries must be positive");
        }
        if self.m_grid.iter().any(|&m| m < 2) {
            return bad("m_grid entries must be at least 2");
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1");
        }
        if self.estimators.is_empty() {
            return bad("at least one estimator is required");
        }
        if self.risk.nodes < 4 {
            return bad("risk.nodes must be at least 4");
        }
        if !(self.noise.sigma >= 0.0) {
            return bad("noise.sigma must be nonnegative");
        }
        Ok(())
    }

    /// Column label per estimator; repeated names get a `-k` suffix.
    pub fn labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.estimators.len());
        for (i, e) in self.estimators.iter().enumerate() {
            let dup = self.estimators[..i].iter().filter(|o| o.name() == e.name()).count();
            out.push(if dup == 0 { e.name().to_string() } else { format!("{}-{}", e.name(), dup + 1) });
        }
        out
    }

    pub fn beta_tilde(&self) -> f64 {
        self.theory.beta_tilde.unwrap_or(match &self.truth {
            TruthSpec::TensorSobolev { coefficients } => 2.0 * coefficients.alpha(),
            TruthSpec::AnisotropicSmooth { .. } => 2.0,
        })
    }

    fn truth_alpha(&self) -> Option<f64> {
        match &self.truth {
            TruthSpec::TensorSobolev { coefficients } => Some(coefficients.alpha()),
            TruthSpec::AnisotropicSmooth { .. } => None,
        }
    }
}

/// Predicted squared-risk exponent in `n` at fixed `m`, with its source.
pub fn predicted_slope(spec: &EstimatorSpec, truth_alpha: Option<f64>) -> Option<(f64, String)> {
    let tensor = |a: f64| (-2.0 * a / (2.0 * a + 1.0), format!("-2a/(2a+1), a={a}"));
    match spec {
        EstimatorSpec::Spectral { .. } => truth_alpha.map(tensor),
        EstimatorSpec::Loclin { .. } => Some((-2.0 / 3.0, "-2/3, twice-differentiable surface".into())),
        EstimatorSpec::Dnn { arch, .. } => match arch {
            ArchChoice::Theory { regime: Regime::Besov { beta_tilde }, .. } => Some((
                -beta_tilde / (beta_tilde + 1.0),
                format!("-b/(b+1), b={beta_tilde}"),
            )),
            ArchChoice::Theory { regime: Regime::TensorSobolev { alpha }, .. } => Some(tensor(*alpha)),
            ArchChoice::Fixed { .. } => truth_alpha.map(tensor),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub n: usize,
    pub m: usize,
    pub replicate: usize,
    pub estimator: String,
    /// `None` on success, otherwise the failure message.
    pub error: Option<String>,
    pub risk_raw: Option<f64>,
    pub risk_psd: Option<f64>,
    pub train_loss: Option<f64>,
    pub tuning: String,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub estimator: String,
    pub n: usize,
    pub m: usize,
    pub ok: usize,
    pub median_risk_raw: Option<f64>,
    pub median_risk_psd: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeEntry {
    pub estimator: String,
    pub m: usize,
    pub points: usize,
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub predicted_slope: Option<f64>,
    pub prediction: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transition {
    pub m_star: f64,
    pub pre_slope: f64,
    pub post_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionEntry {
    pub estimator: String,
    pub n: usize,
    pub points: usize,
    pub m_star: f64,
    pub pre_slope: f64,
    pub post_slope: f64,
    pub predicted_m_star: f64,
    pub beta_tilde: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub rows: Vec<ResultRow>,
    pub cells: Vec<CellSummary>,
    pub slopes: Vec<SlopeEntry>,
    pub transitions: Vec<TransitionEntry>,
}

impl RateReport {
    pub fn cell(&self, estimator: &str, n: usize, m: usize) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.estimator == estimator && c.n == n && c.m == m)
    }

    pub fn slope(&self, estimator: &str, m: usize) -> Option<&SlopeEntry> {
        self.slopes.iter().find(|s| s.estimator == estimator && s.m == m)
    }

    pub fn transition(&self, estimator: &str, n: usize) -> Option<&TransitionEntry> {
        self.transitions.iter().find(|t| t.estimator == estimator && t.n == n)
    }
}

/// Seed of the datasets of one replicate. It is shared by every grid cell and
/// estimator, so cells of a replicate reuse the same subjects' paths (common
/// random numbers across `n` and `m`).
pub fn data_seed(master: SeedSpec, replicate: usize) -> SeedSpec {
    master.child("data", replicate as u64)
}

pub fn fit_seed(master: SeedSpec, label: &str, n: usize, m: usize, replicate: usize) -> SeedSpec {
    master.child(&format!("fit/{label}/n{n}/m{m}"), replicate as u64)
}

/// Raw and (optionally) grid-projected risk of a fitted field.
pub fn measure_risk<F, T>(model: &F, truth: &T, d: usize, risk: &RiskConfig) -> Result<(f64, Option<f64>)>
where
    F: CovarianceField + ?Sized,
    T: CovarianceField + ?Sized,
{
    let raw = l2_risk(model, truth, d, risk.nodes)?.value;
    let psd = match risk.psd_grid {
        Some(g) => {
            let projected = psd_project(&to_grid(model, g, d)?)?;
            Some(l2_risk(&projected, truth, d, risk.nodes)?.value)
        }
        None => None,
    };
    Ok((raw, psd))
}

fn run_one(
    plan: &ExperimentPlan,
    spec: &EstimatorSpec,
    label: &str,
    data: &FunctionalDataset,
    replicate: usize,
) -> ResultRow {
    let (n, m) = (data.n(), data.m());
    let start = Instant::now();
    let outcome = (|| -> Result<(FittedModel, f64, (f64, Option<f64>))> {
        let model = fit_estimator(spec, data, fit_seed(plan.seed, label, n, m, replicate))?;
        let loss = train_loss(&model, data)?;
        let risk = measure_risk(model.field(), &plan.truth.field(), data.d(), &plan.risk)?;
        Ok((model, loss, risk))
    })();
    let wall_seconds = start.elapsed().as_secs_f64();
    let mut row = ResultRow {
        n,
        m,
        replicate,
        estimator: label.to_string(),
        error: None,
        risk_raw: None,
        risk_psd: None,
        train_loss: None,
        tuning: String::new(),
        wall_seconds,
    };
    match outcome {
        Ok((model, loss, (raw, psd))) => {
            row.tuning = model.tuning();
            row.train_loss = Some(loss);
            row.risk_raw = Some(raw);
            row.risk_psd = psd;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Runs every `(n, m, replicate)` task, fits each estimator on the shared
/// dataset and aggregates medians, slopes and breakpoints. Failed fits are
/// recorded in their row and excluded from the aggregates.
pub fn run_plan(plan: &ExperimentPlan) -> Result<RateReport> {
    plan.validate()?;
    let labels = plan.labels();
    let mut tasks = Vec::new();
    for &n in &plan.n_grid {
        for &m in &plan.m_grid {
            for r in 0..plan.replicates {
                tasks.push((n, m, r));
            }
        }
    }
    let rows: Vec<Vec<ResultRow>> = tasks
        .par_iter()
        .map(|&(n, m, r)| {
            match generate_dataset(&plan.truth, n, m, plan.noise, data_seed(plan.seed, r)) {
                Ok(data) => plan
                    .estimators
                    .iter()
                    .zip(&labels)
                    .map(|(spec, label)| run_one(plan, spec, label, &data, r))
                    .collect(),
                Err(e) => labels
                    .iter()
                    .map(|label| ResultRow {
                        n,
                        m,
                        replicate: r,
                        estimator: label.clone(),
                        error: Some(format!("data generation failed: {e}")),
                        risk_raw: None,
                        risk_psd: None,
                        train_loss: None,
                        tuning: String::new(),
                        wall_seconds: 0.0,
                    })
                    .collect(),
            }
        })
        .collect();
    let rows: Vec<ResultRow> = rows.into_iter().flatten().collect();
    Ok(aggregate(plan, rows))
}

fn aggregate(plan: &ExperimentPlan, rows: Vec<ResultRow>) -> RateReport {
    let labels = plan.labels();
    let mut cells = Vec::new();
    for label in &labels {
        for &n in &plan.n_grid {
            for &m in &plan.m_grid {
                let sel: Vec<&ResultRow> =
                    rows.iter().filter(|r| &r.estimator == label && r.n == n && r.m == m && r.error.is_none()).collect();
                let raw: Vec<f64> = sel.iter().filter_map(|r| r.risk_raw).collect();
                let psd: Vec<f64> = sel.iter().filter_map(|r| r.risk_psd).collect();
                cells.push(CellSummary {
                    estimator: label.clone(),
                    n,
                    m,
                    ok: sel.len(),
                    median_risk_raw: median(&raw),
                    median_risk_psd: median(&psd),
                });
            }
        }
    }

    let alpha = plan.truth_alpha();
    let mut slopes = Vec::new();
    for (spec, label) in plan.estimators.iter().zip(&labels) {
        let pred = predicted_slope(spec, alpha);
        for &m in &plan.m_grid {
            let pts: Vec<(f64, f64)> = plan
                .n_grid
                .iter()
                .filter_map(|&n| {
                    let c = cells.iter().find(|c| &c.estimator == label && c.n == n && c.m == m)?;
                    c.median_risk_raw.filter(|r| *r > 0.0).map(|r| (n as f64, r))
                })
                .collect();
            if let Ok(fit) = fit_slope(&pts) {
                slopes.push(SlopeEntry {
                    estimator: label.clone(),
                    m,
                    points: pts.len(),
                    slope: fit.slope,
                    intercept: fit.intercept,
                    stderr: fit.stderr,
                    predicted_slope: pred.as_ref().map(|p| p.0),
                    prediction: pred.as_ref().map(|p| p.1.clone()),
                });
            }
        }
    }

    let beta = plan.beta_tilde();
    let mut transitions = Vec::new();
    for label in &labels {
        for &n in &plan.n_grid {
            let pts: Vec<(f64, f64)> = plan
                .m_grid
                .iter()
                .filter_map(|&m| {
                    let c = cells.iter().find(|c| &c.estimator == label && c.n == n && c.m == m)?;
                    c.median_risk_raw.filter(|r| *r > 0.0).map(|r| (m as f64, r))
                })
                .collect();
            if let Ok(t) = detect_phase_transition(&pts) {
                transitions.push(TransitionEntry {
                    estimator: label.clone(),
                    n,
                    points: pts.len(),
                    m_star: t.m_star,
                    pre_slope: t.pre_slope,
                    post_slope: t.post_slope,
                    predicted_m_star: (n as f64).powf(1.0 / beta),
                    beta_tilde: beta,
                });
            }
        }
    }
    RateReport { rows, cells, slopes, transitions }
}

fn check_points(points: &[(f64, f64)], min: usize) -> Result<()> {
    if points.len() < min {
        return Err(Error::InvalidInput(format!("need at least {min} points, got {}", points.len())));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0) || !(y > 0.0) || !x.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidInput("log-log fits need positive finite inputs".into()));
    }
    Ok(())
}

/// Ordinary least squares of `ln y` on `ln x`.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    check_points(points, 3)?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("all x values are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let stderr = (sse / (k - 2.0) / sxx).sqrt();
    Ok(SlopeFit { slope, intercept, stderr })
}

const BREAKPOINT_STEPS: usize = 400;

/// Continuous two-segment fit of `ln r` on `ln m`,
/// `a + b x + c (x - x0)_+`, scanning `x0` over a fine grid between the second
/// and second-to-last points. A single line (breakpoint at the last point) is
/// kept unless a hinge lowers the residual by more than a relative `1e-9`.
pub fn detect_phase_transition(points: &[(f64, f64)]) -> Result<Transition> {
    check_points(points, 6)?;
    let mut pts: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let line = fit_slope(points)?;
    let line_sse: f64 = pts.iter().map(|(x, y)| (y - line.intercept - line.slope * x).powi(2)).sum();
    let last = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let mut best = (line_sse, last.ln(), line.slope, line.slope);
    let mut hinged = false;
    let lo = pts[1].0;
    let hi = pts[pts.len() - 2].0;
    let tol = 1e-9 * line_sse.max(1e-300);
    for step in 0..=BREAKPOINT_STEPS {
        let x0 = lo + (hi - lo) * step as f64 / BREAKPOINT_STEPS as f64;
        if let Some((sse, b, c)) = hinge_fit(&pts, x0) {
            if sse < best.0 - tol {
                best = (sse, x0, b, b + c);
                hinged = true;
            }
        }
    }
    let m_star = if hinged { best.1.exp() } else { last };
    Ok(Transition { m_star, pre_slope: best.2, post_slope: best.3 })
}

fn hinge_fit(pts: &[(f64, f64)], x0: f64) -> Option<(f64, f64, f64)> {
    let mut g = [[0.0f64; 3]; 3];
    let mut r = [0.0f64; 3];
    for &(x, y) in pts {
        let f = [1.0, x, (x - x0).max(0.0)];
        for a in 0..3 {
            for b in 0..3 {
                g[a][b] += f[a] * f[b];
            }
            r[a] += f[a] * y;
        }
    }
    let sol = solve3(g, r)?;
    let sse = pts
        .iter()
        .map(|&(x, y)| (y - sol[0] - sol[1] * x - sol[2] * (x - x0).max(0.0)).powi(2))
        .sum();
    Some((sse, sol[1], sol[2]))
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    let scale = a.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

fn num(x: Option<f64>) -> String {
    x.map(|v| format!("{v:?}")).unwrap_or_default()
}

/// Long-format results without timing, so reruns are byte-identical.
pub fn results_csv(report: &RateReport) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["n", "m", "replicate", "estimator", "status", "risk_raw", "risk_psd", "train_loss", "tuning"])
        .expect("in-memory write");
    for r in &report.rows {
        let status = match &r.error {
            None => "ok".to_string(),
            Some(e) => format!("failed: {e}"),
        };
        w.write_record([
            r.n.to_string(),
            r.m.to_string(),
            r.replicate.to_string(),
            r.estimator.clone(),
            status,
            num(r.risk_raw),
            num(r.risk_psd),
            num(r.train_loss),
            r.tuning.clone(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

pub fn timings_csv(report: &RateReport) -> String {
    let mut out = String::from("n,m,replicate,estimator,wall_seconds\n");
    for r in &report.rows {
        out.push_str(&format!("{},{},{},{},{:?}\n", r.n, r.m, r.replicate, r.estimator, r.wall_seconds));
    }
    out
}

pub fn summary_csv(report: &RateReport) -> String {
    let mut out = String::from("estimator,n,m,ok,median_risk_raw,median_risk_psd\n");
    for c in &report.cells {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.estimator,
            c.n,
            c.m,
            c.ok,
            num(c.median_risk_raw),
            num(c.median_risk_psd)
        ));
    }
    out
}

#[derive(Serialize)]
struct SlopesDoc<'a> {
    axis: &'static str,
    aggregate: &'static str,
    note: &'static str,
    slopes: &'a [SlopeEntry],
}

#[derive(Serialize)]
struct TransitionsDoc<'a> {
    axis: &'static str,
    method: &'static str,
    transitions: &'a [TransitionEntry],
}

pub fn slopes_json(report: &RateReport) -> String {
    let doc = SlopesDoc {
        axis: "n",
        aggregate: "median_risk_raw",
        note: "predictions are pure power laws; logarithmic factors are ignored",
        slopes: &report.slopes,
    };
    serde_json::to_string_pretty(&doc).expect("serializable") + "\n"
}

pub fn transitions_json(report: &RateReport) -> String {
    let doc = TransitionsDoc {
        axis: "m",
        method: "continuous two-segment least squares on log-log medians",
        transitions: &report.transitions,
    };
    serde_json::to_string_pretty(&doc).expect("serializable") + "\n"
}

/// Writes `results.csv`, `summary.csv`, `timings.csv`, `slopes.json` and
/// `transitions.json` into `dir`, creating it if needed.
pub fn write_report(report: &RateReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("results.csv"), results_csv(report))?;
    fs::write(dir.join("summary.csv"), summary_csv(report))?;
    fs::write(dir.join("timings.csv"), timings_csv(report))?;
    fs::write(dir.join("slopes.json"), slopes_json(report))?;
    fs::write(dir.join("transitions.json"), transitions_json(report))?;
    Ok(())
}
