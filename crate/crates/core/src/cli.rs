//! The `vmfrobust` command line. All angles are in radians.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{asymptotic_cov, influence};
use crate::error::VmfError;
use crate::estimators::{
    fit, fit_lenth, EstimatorConfig, EstimatorKind, FitResult, Init, LenthConfig, PsiKind, RobustFamily, TraceEntry,
};
use crate::simulation::{
    run_simulation, table_sweep, write_long_csv, write_table_csv, SimulationConfig, SimulationReport, SweepReport,
};
use crate::special::Dimension;
use crate::tuning::{cross_validate, default_grid, CvPoint, CvSpec};
use crate::vmf_model::{
    dot, in_outlier_region, outlier_delta, sample, stream_rng, Contaminant, MixtureModel, NaturalParam, SampleModel,
    UnitVector,
};

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const PARSE: i32 = 2;
    pub const NON_CONVERGENCE: i32 = 3;
    pub const DEGENERATE: i32 = 4;
    pub const CONFIG: i32 = 5;
}

/// Rows whose norm is further than this from 1 are renormalised with a warning.
pub const RENORM_WARN: f64 = 1e-6;

#[derive(Debug)]
pub enum CliError {
    Parse(String),
    Io(String),
    Vmf(VmfError),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Parse(m) => write!(f, "parse error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Vmf(e) => write!(f, "{e}"),
        }
    }
}

impl From<VmfError> for CliError {
    fn from(e: VmfError) -> Self {
        CliError::Vmf(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => exit::PARSE,
            CliError::Io(_) => exit::OTHER,
            CliError::Vmf(e) => match e {
                VmfError::Domain(_) | VmfError::DimensionMismatch { .. } => exit::PARSE,
                VmfError::NonConvergence { .. } | VmfError::Diverged { .. } => exit::NON_CONVERGENCE,
                VmfError::DegenerateData(_) => exit::DEGENERATE,
                VmfError::InvalidConfig(_) => exit::CONFIG,
                VmfError::Quadrature { .. } | VmfError::Singular { .. } => exit::OTHER,
            },
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

// ---------------------------------------------------------------- arguments

#[derive(Debug, Parser)]
#[command(
    name = "vmfrobust",
    version,
    about = "Robust estimation for the von Mises-Fisher distribution",
    long_about = "Robust estimation for the von Mises-Fisher distribution.\n\n\
All angles, on input and output, are in radians.\n\
Exit status: 0 ok, 2 parse or invalid input, 3 no convergence, 4 degenerate data, 5 bad config, 1 other."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    /// One column when the file has one column, otherwise vectors.
    Auto,
    /// One angle per row (radians), circle only.
    AnglesCsv,
    /// `p` comma-separated coordinates per row.
    VectorsCsv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitEstimator {
    Mle,
    Type1,
    Type0,
    Lenth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DiagKind {
    Mle,
    Type1,
    Type0,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CvFamily {
    Type1,
    Type0,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ContaminantArg {
    Uniform,
    Vmf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PsiArg {
    Huber,
    Andrews,
}

#[derive(Debug, clap::Args)]
pub struct InputArgs {
    /// Data file (CSV, `#` starts a comment, an optional header row is skipped).
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = InputFormat::Auto)]
    pub format: InputFormat,
}

#[derive(Debug, clap::Args)]
pub struct MixtureArgs {
    /// Contamination weight of the mixture `G`.
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    #[arg(long, value_enum, default_value_t = ContaminantArg::Uniform)]
    pub contaminant: ContaminantArg,
    /// Natural parameter of a vMF contaminant.
    #[arg(long, num_args = 1.., value_delimiter = ',', allow_negative_numbers = true)]
    pub eta: Option<Vec<f64>>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one estimator and print a JSON report.
    Fit {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum, default_value_t = FitEstimator::Mle)]
        estimator: FitEstimator,
        /// β (type1) or γ (type0).
        #[arg(long)]
        tuning: Option<f64>,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 500)]
        max_iter: usize,
        /// `mle` or comma-separated starting coordinates of ξ.
        #[arg(long, default_value = "mle", allow_hyphen_values = true)]
        init: String,
        /// ψ function for Lenth's estimator.
        #[arg(long, value_enum, default_value_t = PsiArg::Huber)]
        psi: PsiArg,
        /// Tuning constant of Lenth's ψ.
        #[arg(long, default_value_t = 1.5)]
        c: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Select the tuning value by K-fold cross-validation.
    Cv {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum)]
        estimator: CvFamily,
        /// Candidate values (default 0.01, 0.02, ..., 1.00).
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long, default_value_t = 3)]
        folds: usize,
        #[arg(long, default_value_t = 0.6)]
        loss_param: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write `tuning,score,failed_folds` rows here.
        #[arg(long)]
        curve_csv: Option<PathBuf>,
    },
    /// Influence function, sandwich covariance, outlier region and Q-Q data.
    Diagnose {
        /// Data file; ξ is fitted from it when `--xi` is absent.
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = InputFormat::Auto)]
        format: InputFormat,
        #[arg(long, num_args = 1.., value_delimiter = ',', allow_negative_numbers = true)]
        xi: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value_t = DiagKind::Mle)]
        kind: DiagKind,
        #[arg(long)]
        tuning: Option<f64>,
        #[command(flatten)]
        mixture: MixtureArgs,
        /// Points per great circle of the influence grid.
        #[arg(long, default_value_t = 360)]
        grid_size: usize,
        /// Tail probability of the outlier cap.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        if_csv: Option<PathBuf>,
        #[arg(long)]
        qq_csv: Option<PathBuf>,
    },
    /// Run a Monte-Carlo study described by a TOML file.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, value_enum, default_value_t = SimFormat::Csv)]
        format: SimFormat,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Relative-MSE table (estimators by sweep values) as CSV.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Fill `--table` with the aggregate that keeps non-converged fits.
        #[arg(long)]
        retained: bool,
    },
    /// Draw a sample and write it as vectors-csv.
    Sample {
        #[arg(long, num_args = 1.., value_delimiter = ',', allow_negative_numbers = true, required = true)]
        xi: Vec<f64>,
        #[command(flatten)]
        mixture: MixtureArgs,
        #[arg(short = 'n', long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

// ------------------------------------------------------------------- data

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Vec<UnitVector>,
    pub warnings: Vec<String>,
}

fn parse_row(rec: &csv::StringRecord) -> Option<Vec<f64>> {
    rec.iter().map(|f| f.trim().parse::<f64>().ok()).collect()
}

/// Parses dataset text in either CSV format.
pub fn parse_dataset(text: &str, format: InputFormat) -> CliResult<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Parse(e.to_string()))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(i + 1);
        match parse_row(&rec) {
            Some(v) => rows.push((line, v)),
            None if rows.is_empty() && i == 0 => continue,
            None => return Err(CliError::Parse(format!("line {line}: non-numeric field"))),
        }
    }
    if rows.is_empty() {
        return Err(CliError::Parse("no data rows".into()));
    }
    let width = rows[0].1.len();
    if let Some((line, r)) = rows.iter().find(|(_, r)| r.len() != width) {
        return Err(CliError::Parse(format!("line {line}: expected {width} fields, found {}", r.len())));
    }
    let angles = match format {
        InputFormat::AnglesCsv => true,
        InputFormat::VectorsCsv => false,
        InputFormat::Auto => width == 1,
    };
    let mut points = Vec::with_capacity(rows.len());
    let mut warnings = Vec::new();
    for (line, r) in rows {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Parse(format!("line {line}: non-finite value")));
        }
        if angles {
            if r.len() != 1 {
                return Err(CliError::Parse(format!("line {line}: angles-csv expects one column")));
            }
            points.push(UnitVector::from_angle(r[0]));
        } else {
            if r.len() < 2 {
                return Err(CliError::Parse(format!("line {line}: vectors-csv needs at least 2 columns")));
            }
            let norm = r.iter().map(|a| a * a).sum::<f64>().sqrt();
            if !(norm > 0.0) {
                return Err(CliError::Parse(format!("line {line}: zero vector")));
            }
            if (norm - 1.0).abs() > RENORM_WARN {
                warnings.push(format!("line {line}: norm {norm} renormalised"));
            }
            points.push(UnitVector::normalize(r).map_err(|e| CliError::Parse(format!("line {line}: {e}")))?);
        }
    }
    Ok(Dataset { points, warnings })
}

pub fn read_dataset(path: &Path, format: InputFormat) -> CliResult<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let ds = parse_dataset(&text, format)?;
    for w in &ds.warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(ds)
}

/// Writes points as vectors-csv with a header row `x1,...,xp`.
pub fn write_vectors_csv<W: Write>(points: &[UnitVector], out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let p = points.first().map(|x| x.dim()).unwrap_or(0);
    let header: Vec<String> = (1..=p).map(|k| format!("x{k}")).collect();
    let err = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(&header).map_err(err)?;
    for x in points {
        w.write_record(x.coords().iter().map(|c| c.to_string())).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(())
}

// ---------------------------------------------------------------- reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Report {
    Fit(FitReport),
    Cv(CvReport),
    Diagnose(DiagnoseReport),
    Simulate(SimulateReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub estimator: String,
    pub tuning: Option<f64>,
    pub n: usize,
    pub p: usize,
    pub xi_hat: Vec<f64>,
    pub kappa_hat: f64,
    /// `ξ̂/‖ξ̂‖`, absent when `ξ̂ = 0`.
    pub mean_direction: Option<Vec<f64>>,
    /// `atan2(ξ̂_2, ξ̂_1)` on the circle.
    pub mu_hat: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub zero_resultant: bool,
    pub initial_objective: Option<f64>,
    pub trace: Vec<TraceEntry>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub estimator: RobustFamily,
    pub n: usize,
    pub folds: usize,
    pub loss_param: f64,
    pub seed: u64,
    pub best: f64,
    pub best_score: f64,
    pub curve: Vec<CvPoint>,
    pub fold_assignment: Vec<usize>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub m: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub condition: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluencePoint {
    pub x: Vec<f64>,
    pub influence: Vec<f64>,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub alpha: f64,
    pub delta: f64,
    /// Indices of observations inside the cap.
    pub flagged: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QqPoint {
    pub model: f64,
    pub empirical: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub kind: String,
    pub tuning: Option<f64>,
    pub xi: Vec<f64>,
    pub mixture: MixtureModel,
    pub covariance: Option<CovarianceReport>,
    pub influence_grid: Vec<InfluencePoint>,
    pub if_argmax: Vec<f64>,
    pub if_argmin: Vec<f64>,
    pub outlier: Option<OutlierReport>,
    /// `signed_angle` on the circle, `colatitude` otherwise.
    pub qq_residual: Option<String>,
    pub qq: Vec<QqPoint>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "lowercase")]
pub enum SimulateReport {
    Single(SimulationReport),
    Sweep(SweepReport),
}

fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(p) => fs::write(p, bytes).map_err(|e| io_err(p, e)),
        None => io::stdout().write_all(bytes).map_err(|e| CliError::Io(e.to_string())),
    }
}

fn emit_json(report: &Report, out: Option<&Path>) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(report).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    write_output(out, s.as_bytes())
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(CliError::Vmf(VmfError::InvalidConfig("--workers must be at least 1".into()))),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| CliError::Io(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

// ---------------------------------------------------------------- commands

fn parse_init(s: &str) -> CliResult<Init> {
    if s.trim().eq_ignore_ascii_case("mle") {
        return Ok(Init::Mle);
    }
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| CliError::Parse(format!("bad --init value `{s}`"))))
        .collect::<CliResult<_>>()?;
    Ok(Init::Explicit(NaturalParam::new(v)?))
}

fn need_tuning(t: Option<f64>, name: &str) -> CliResult<f64> {
    t.ok_or_else(|| CliError::Parse(format!("--tuning is required for {name}")))
}

fn fit_report(estimator: &str, tuning: Option<f64>, n: usize, r: FitResult, warnings: Vec<String>) -> FitReport {
    let xi = r.xi_hat.as_slice().to_vec();
    let kappa = r.xi_hat.kappa();
    FitReport {
        estimator: estimator.to_string(),
        tuning,
        n,
        p: xi.len(),
        mean_direction: r.xi_hat.mean_direction().ok().map(|m| m.into_inner()),
        mu_hat: (xi.len() == 2 && kappa > 0.0).then(|| xi[1].atan2(xi[0])),
        xi_hat: xi,
        kappa_hat: kappa,
        iterations: r.iterations,
        converged: r.converged,
        zero_resultant: r.zero_resultant,
        initial_objective: r.initial_objective,
        trace: r.trace,
        warnings,
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit(
    input: &InputArgs,
    estimator: FitEstimator,
    tuning: Option<f64>,
    tol: f64,
    max_iter: usize,
    init: &str,
    psi: PsiArg,
    c: f64,
) -> CliResult<Report> {
    let ds = read_dataset(&input.input, input.format)?;
    let n = ds.points.len();
    let cfg = EstimatorConfig { max_iter, tol, init: parse_init(init)? };
    let (name, kind) = match estimator {
        FitEstimator::Mle => ("mle", EstimatorKind::Mle),
        FitEstimator::Type1 => ("type1", EstimatorKind::Type1 { tuning: need_tuning(tuning, "type1")? }),
        FitEstimator::Type0 => ("type0", EstimatorKind::Type0 { tuning: need_tuning(tuning, "type0")? }),
        FitEstimator::Lenth => {
            if ds.points[0].dim() != 2 {
                return Err(CliError::Parse("Lenth's estimator needs circular data".into()));
            }
            let angles: Vec<f64> = ds.points.iter().map(|x| x.coords()[1].atan2(x.coords()[0])).collect();
            let lc = LenthConfig {
                psi_kind: match psi {
                    PsiArg::Huber => PsiKind::Huber,
                    PsiArg::Andrews => PsiKind::Andrews,
                },
                c,
                max_iter,
                tol,
            };
            let lf = fit_lenth(&angles, &lc)?;
            let xi = NaturalParam::new(vec![lf.kappa_hat * lf.mu_hat.cos(), lf.kappa_hat * lf.mu_hat.sin()])?;
            let r = FitResult {
                xi_hat: xi,
                iterations: lf.iterations,
                converged: lf.converged,
                trace: Vec::new(),
                initial_objective: None,
                zero_resultant: false,
            };
            let mut rep = fit_report("lenth", Some(c), n, r, ds.warnings);
            rep.mu_hat = Some(lf.mu_hat);
            return Ok(Report::Fit(rep));
        }
    };
    let r = fit(kind, &ds.points, &cfg)?;
    Ok(Report::Fit(fit_report(name, kind.tuning(), n, r, ds.warnings)))
}

#[allow(clippy::too_many_arguments)]
fn cmd_cv(
    input: &InputArgs,
    family: CvFamily,
    grid: Option<Vec<f64>>,
    folds: usize,
    loss_param: f64,
    seed: u64,
    workers: Option<usize>,
    curve_csv: Option<&Path>,
) -> CliResult<Report> {
    let ds = read_dataset(&input.input, input.format)?;
    let est = match family {
        CvFamily::Type1 => RobustFamily::Type1,
        CvFamily::Type0 => RobustFamily::Type0,
    };
    let spec = CvSpec { grid: grid.unwrap_or_else(default_grid), folds, loss_param, seed, fit: EstimatorConfig::default() };
    let res = with_workers(workers, || cross_validate(&ds.points, est, &spec))??;
    if let Some(path) = curve_csv {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| CliError::Io(e.to_string());
        w.write_record(["tuning", "score", "failed_folds"]).map_err(err)?;
        for pt in &res.curve {
            w.write_record([
                pt.tuning.to_string(),
                pt.score.map(|s| s.to_string()).unwrap_or_default(),
                pt.failures.len().to_string(),
            ])
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(path, bytes).map_err(|e| io_err(path, e))?;
    }
    Ok(Report::Cv(CvReport {
        estimator: est,
        n: ds.points.len(),
        folds,
        loss_param,
        seed,
        best: res.best,
        best_score: res.best_score,
        curve: res.curve,
        fold_assignment: res.fold_assignment,
        warnings: ds.warnings,
    }))
}

fn mixture_from(primary: &NaturalParam, m: &MixtureArgs) -> CliResult<MixtureModel> {
    let contaminant = match m.contaminant {
        ContaminantArg::Uniform => {
            if m.eta.is_some() {
                return Err(CliError::Parse("--eta needs --contaminant vmf".into()));
            }
            Contaminant::Uniform
        }
        ContaminantArg::Vmf => {
            let eta = m.eta.clone().ok_or_else(|| CliError::Parse("--contaminant vmf needs --eta".into()))?;
            Contaminant::Vmf { eta: NaturalParam::new(eta)? }
        }
    };
    Ok(MixtureModel::new(m.epsilon, primary.clone(), contaminant)?)
}

fn unit(v: Vec<f64>) -> UnitVector {
    UnitVector::normalize(v).expect("grid points are nonzero")
}

/// Points of the influence grid: the circle at `size` equal steps, a
/// colatitude/longitude lattice on `S^2`, and seeded uniform points plus
/// `±e_k` in higher dimensions.
pub fn sphere_grid(p: usize, size: usize) -> Vec<UnitVector> {
    let size = size.max(4);
    match p {
        2 => (0..size)
            .map(|k| UnitVector::from_angle(2.0 * std::f64::consts::PI * k as f64 / size as f64))
            .collect(),
        3 => {
            let m = size / 2;
            let mut out = vec![unit(vec![1.0, 0.0, 0.0]), unit(vec![-1.0, 0.0, 0.0])];
            for i in 1..m {
                let th = std::f64::consts::PI * i as f64 / m as f64;
                for j in 0..size {
                    let ph = 2.0 * std::f64::consts::PI * j as f64 / size as f64;
                    out.push(unit(vec![th.cos(), th.sin() * ph.cos(), th.sin() * ph.sin()]));
                }
            }
            out
        }
        _ => {
            let mut out = Vec::new();
            for k in 0..p {
                for s in [1.0, -1.0] {
                    let mut v = vec![0.0; p];
                    v[k] = s;
                    out.push(unit(v));
                }
            }
            let model = SampleModel::Uniform(Dimension::new(p).expect("p >= 2"));
            let extra = crate::vmf_model::sample_with(&model, size * size, &mut stream_rng(0, 0)).expect("n > 0");
            out.extend(extra);
            out
        }
    }
}

/// CDF table of the residual angle under `vM_p(κ)` on `[lo, hi]`.
struct ResidualCdf {
    s: Vec<f64>,
    cdf: Vec<f64>,
}

impl ResidualCdf {
    const STEPS: usize = 20000;

    fn new(p: usize, kappa: f64) -> Self {
        let pi = std::f64::consts::PI;
        let (lo, hi) = if p == 2 { (-pi, pi) } else { (0.0, pi) };
        let dens = |s: f64| (kappa * (s.cos() - 1.0)).exp() * if p == 2 { 1.0 } else { s.sin().powi(p as i32 - 2) };
        let h = (hi - lo) / Self::STEPS as f64;
        let s: Vec<f64> = (0..=Self::STEPS).map(|k| lo + h * k as f64).collect();
        let mut cdf = vec![0.0; s.len()];
        for k in 1..s.len() {
            // Simpson on each cell through its midpoint.
            let mid = 0.5 * (s[k - 1] + s[k]);
            cdf[k] = cdf[k - 1] + h / 6.0 * (dens(s[k - 1]) + 4.0 * dens(mid) + dens(s[k]));
        }
        let total = cdf[Self::STEPS];
        for c in &mut cdf {
            *c /= total;
        }
        ResidualCdf { s, cdf }
    }

    fn quantile(&self, q: f64) -> f64 {
        let k = self.cdf.partition_point(|c| *c < q).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let t = if c1 > c0 { (q - c0) / (c1 - c0) } else { 0.5 };
        self.s[k - 1] + t * (self.s[k] - self.s[k - 1])
    }
}

/// Model-versus-empirical quantiles of the residual angle about `ξ/‖ξ‖`:
/// signed on the circle, the colatitude otherwise.
pub fn qq_points(xi: &NaturalParam, data: &[UnitVector]) -> CliResult<Vec<QqPoint>> {
    let mu = xi.mean_direction()?;
    let p = xi.dim();
    let mut resid: Vec<f64> = data
        .iter()
        .map(|x| {
            let c = dot(mu.coords(), x.coords()).clamp(-1.0, 1.0);
            if p == 2 {
                let (m, v) = (mu.coords(), x.coords());
                (m[0] * v[1] - m[1] * v[0]).atan2(c)
            } else {
                c.acos()
            }
        })
        .collect();
    resid.sort_by(f64::total_cmp);
    let table = ResidualCdf::new(p, xi.kappa());
    let n = resid.len() as f64;
    Ok(resid
        .iter()
        .enumerate()
        .map(|(i, &e)| QqPoint { model: table.quantile((i as f64 + 0.5) / n), empirical: e })
        .collect())
}

#[allow(clippy::too_many_arguments)]
fn cmd_diagnose(
    input: Option<&Path>,
    format: InputFormat,
    xi: Option<Vec<f64>>,
    kind: DiagKind,
    tuning: Option<f64>,
    mixture: &MixtureArgs,
    grid_size: usize,
    alpha: Option<f64>,
    if_csv: Option<&Path>,
    qq_csv: Option<&Path>,
) -> CliResult<Report> {
    let ekind = match kind {
        DiagKind::Mle => EstimatorKind::Mle,
        DiagKind::Type1 => EstimatorKind::Type1 { tuning: need_tuning(tuning, "type1")? },
        DiagKind::Type0 => EstimatorKind::Type0 { tuning: need_tuning(tuning, "type0")? },
    };
    let data = match input {
        Some(p) => Some(read_dataset(p, format)?),
        None => None,
    };
    let xi = match (xi, &data) {
        (Some(v), _) => NaturalParam::new(v)?,
        (None, Some(ds)) => fit(ekind, &ds.points, &EstimatorConfig::default())?.xi_hat,
        (None, None) => return Err(CliError::Parse("give a data file or --xi".into())),
    };
    if let Some(ds) = &data {
        if ds.points[0].dim() != xi.dim() {
            return Err(VmfError::DimensionMismatch { expected: xi.dim(), found: ds.points[0].dim() }.into());
        }
    }
    let g = mixture_from(&xi, mixture)?;
    let mut warnings = data.as_ref().map(|d| d.warnings.clone()).unwrap_or_default();

    let covariance = match asymptotic_cov(ekind, &xi, &g) {
        Ok(s) => Some(CovarianceReport {
            m: matrix_rows(&s.m),
            q: matrix_rows(&s.q),
            v: matrix_rows(&s.v),
            condition: s.condition,
        }),
        Err(VmfError::Singular { condition }) => {
            warnings.push(format!("M is numerically singular (condition {condition:e})"));
            None
        }
        Err(e) => return Err(e.into()),
    };

    let mut grid_pts = Vec::new();
    if covariance.is_some() {
        for x in sphere_grid(xi.dim(), grid_size) {
            let v = influence(ekind, &xi, &g, &x)?;
            let norm = v.norm();
            grid_pts.push(InfluencePoint { x: x.into_inner(), influence: v.iter().cloned().collect(), norm });
        }
    }
    let pick = |better: fn(f64, f64) -> bool| {
        grid_pts
            .iter()
            .fold(None::<&InfluencePoint>, |acc, p| match acc {
                Some(a) if !better(p.norm, a.norm) => Some(a),
                _ => Some(p),
            })
            .map(|p| p.x.clone())
            .unwrap_or_default()
    };
    let if_argmax = pick(|a, b| a > b);
    let if_argmin = pick(|a, b| a < b);

    let outlier = match alpha {
        Some(a) => {
            let region = outlier_delta(&xi, a)?;
            let mut flagged = Vec::new();
            if let Some(ds) = &data {
                for (i, x) in ds.points.iter().enumerate() {
                    if in_outlier_region(&region, &xi, x)? {
                        flagged.push(i);
                    }
                }
            }
            Some(OutlierReport { alpha: a, delta: region.delta, flagged })
        }
        None => None,
    };

    let qq = match &data {
        Some(ds) => qq_points(&xi, &ds.points)?,
        None => Vec::new(),
    };

    if let Some(path) = if_csv {
        let p = xi.dim();
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| CliError::Io(e.to_string());
        let mut header: Vec<String> = (1..=p).map(|k| format!("x{k}")).collect();
        header.extend((1..=p).map(|k| format!("if{k}")));
        header.push("norm".into());
        w.write_record(&header).map_err(err)?;
        for pt in &grid_pts {
            let row = pt.x.iter().chain(&pt.influence).chain(std::iter::once(&pt.norm)).map(|v| v.to_string());
            w.write_record(row).map_err(err)?;
        }
        fs::write(path, w.into_inner().map_err(|e| CliError::Io(e.to_string()))?).map_err(|e| io_err(path, e))?;
    }
    if let Some(path) = qq_csv {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| CliError::Io(e.to_string());
        w.write_record(["model", "empirical"]).map_err(err)?;
        for q in &qq {
            w.write_record([q.model.to_string(), q.empirical.to_string()]).map_err(err)?;
        }
        fs::write(path, w.into_inner().map_err(|e| CliError::Io(e.to_string()))?).map_err(|e| io_err(path, e))?;
    }

    Ok(Report::Diagnose(DiagnoseReport {
        kind: match ekind {
            EstimatorKind::Mle => "mle",
            EstimatorKind::Type1 { .. } => "type1",
            EstimatorKind::Type0 { .. } => "type0",
        }
        .to_string(),
        tuning: ekind.tuning(),
        xi: xi.as_slice().to_vec(),
        mixture: g,
        covariance,
        influence_grid: grid_pts,
        if_argmax,
        if_argmin,
        outlier,
        qq_residual: data.as_ref().map(|_| if xi.dim() == 2 { "signed_angle" } else { "colatitude" }.to_string()),
        qq,
        warnings,
    }))
}

fn cmd_simulate(
    spec: &Path,
    workers: Option<usize>,
    format: SimFormat,
    out: Option<&Path>,
    table: Option<&Path>,
    retained: bool,
) -> CliResult<()> {
    let text = fs::read_to_string(spec).map_err(|e| io_err(spec, e))?;
    let cfg = SimulationConfig::from_toml(&text)?;
    let report = with_workers(workers, || -> crate::Result<SimulateReport> {
        Ok(match &cfg.sweep {
            Some(s) => SimulateReport::Sweep(table_sweep(&cfg.simulation, s)?),
            None => SimulateReport::Single(run_simulation(&cfg.simulation)?),
        })
    })??;
    if let Some(path) = table {
        let SimulateReport::Sweep(sw) = &report else {
            return Err(VmfError::InvalidConfig("--table needs a [sweep] section".into()).into());
        };
        let mut buf = Vec::new();
        write_table_csv(sw, retained, &mut buf)?;
        fs::write(path, buf).map_err(|e| io_err(path, e))?;
    }
    match format {
        SimFormat::Json => emit_json(&Report::Simulate(report), out),
        SimFormat::Csv => {
            let cells = match &report {
                SimulateReport::Single(r) => std::slice::from_ref(r),
                SimulateReport::Sweep(s) => &s.cells[..],
            };
            let mut buf = Vec::new();
            write_long_csv(cells, &mut buf)?;
            write_output(out, &buf)
        }
    }
}

fn cmd_sample(xi: Vec<f64>, mixture: &MixtureArgs, n: usize, seed: u64, out: Option<&Path>) -> CliResult<()> {
    let xi = NaturalParam::new(xi)?;
    let model = if mixture.epsilon > 0.0 || mixture.eta.is_some() {
        SampleModel::Mixture(mixture_from(&xi, mixture)?)
    } else {
        SampleModel::Vmf(xi)
    };
    let pts = sample(&model, n, seed)?;
    let mut buf = Vec::new();
    write_vectors_csv(&pts, &mut buf)?;
    write_output(out, &buf)
}

/// Executes a parsed command.
pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Fit { input, estimator, tuning, tol, max_iter, init, psi, c, out } => {
            let r = cmd_fit(&input, estimator, tuning, tol, max_iter, &init, psi, c)?;
            emit_json(&r, out.as_deref())
        }
        Command::Cv { input, estimator, grid, folds, loss_param, seed, workers, out, curve_csv } => {
            let r = cmd_cv(&input, estimator, grid, folds, loss_param, seed, workers, curve_csv.as_deref())?;
            emit_json(&r, out.as_deref())
        }
        Command::Diagnose {
            input,
            format,
            xi,
            kind,
            tuning,
            mixture,
            grid_size,
            alpha,
            out,
            if_csv,
            qq_csv,
        } => {
            let r = cmd_diagnose(
                input.as_deref(),
                format,
                xi,
                kind,
                tuning,
                &mixture,
                grid_size,
                alpha,
                if_csv.as_deref(),
                qq_csv.as_deref(),
            )?;
            emit_json(&r, out.as_deref())
        }
        Command::Simulate { spec, workers, format, out, table, retained } => {
            cmd_simulate(&spec, workers, format, out.as_deref(), table.as_deref(), retained)
        }
        Command::Sample { xi, mixture, n, seed, out } => cmd_sample(xi, &mixture, n, seed, out.as_deref()),
    }
}

/// Parses `args`, runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Vmf(VmfError::NonConvergence { last_iterate, .. }) = &e {
                eprintln!("last iterate: {last_iterate:?}");
            }
            e.exit_code()
        }
    }
}
