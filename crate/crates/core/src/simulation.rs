//! Monte-Carlo estimates of mean squared errors relative to maximum
//! likelihood, for single designs and for sweeps over `n` or `ε`.
//!
//! Replicate `r` of a run seeded with `s` draws from stream `r` of `s`, and
//! results are reduced in replicate order, so reports do not depend on the
//! number of worker threads.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VmfError};
use crate::estimators::{fit, EstimatorConfig, EstimatorKind, RobustFamily};
use crate::vmf_model::{
    derive_seed, sample_with, stream_rng, Contaminant, MixtureModel, NaturalParam, SampleModel,
};

/// Default replicate count.
pub const DEFAULT_REPLICATES: usize = 2000;

fn default_replicates() -> usize {
    DEFAULT_REPLICATES
}

/// How the clean model is contaminated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Contamination {
    None,
    /// `(1 - ε) vM_p(ξ) + ε U_p`.
    Uniform { epsilon: f64 },
    /// `(1 - ε) vM_p(ξ) + ε vM_p(ζ)`.
    Vmf { zeta: NaturalParam, epsilon: f64 },
}

impl Contamination {
    pub fn epsilon(&self) -> f64 {
        match self {
            Contamination::None => 0.0,
            Contamination::Uniform { epsilon } | Contamination::Vmf { epsilon, .. } => *epsilon,
        }
    }

    fn with_epsilon(&self, e: f64) -> Result<Contamination> {
        Ok(match self {
            Contamination::None => {
                return Err(VmfError::InvalidConfig(
                    "an epsilon sweep needs a uniform or vmf contamination".into(),
                ))
            }
            Contamination::Uniform { .. } => Contamination::Uniform { epsilon: e },
            Contamination::Vmf { zeta, .. } => Contamination::Vmf { zeta: zeta.clone(), epsilon: e },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub p: usize,
    pub true_xi: NaturalParam,
    pub contamination: Contamination,
    pub n: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Estimators compared against the MLE, which is always run.
    pub estimators: Vec<EstimatorKind>,
    pub seed: u64,
    #[serde(default)]
    pub fit: EstimatorConfig,
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VmfError::InvalidConfig(m));
        if self.true_xi.dim() != self.p {
            return bad(format!("true_xi has {} coordinates but p = {}", self.true_xi.dim(), self.p));
        }
        if self.replicates < 1 {
            return bad("replicates must be at least 1".into());
        }
        if self.n < 1 {
            return bad("n must be at least 1".into());
        }
        let e = self.contamination.epsilon();
        if !(0.0..=1.0).contains(&e) {
            return bad(format!("epsilon must lie in [0, 1], got {e}"));
        }
        if let Contamination::Vmf { zeta, .. } = &self.contamination {
            if zeta.dim() != self.p {
                return bad(format!("zeta has {} coordinates but p = {}", zeta.dim(), self.p));
            }
        }
        for k in &self.estimators {
            if let Some(t) = k.tuning() {
                if !(t > 0.0) || !t.is_finite() {
                    return bad(format!("{} needs a positive tuning value", k.label()));
                }
            }
        }
        if self.fit.max_iter < 1 || !(self.fit.tol > 0.0) {
            return bad("fit.max_iter must be >= 1 and fit.tol positive".into());
        }
        Ok(())
    }

    /// The sampling law of one replicate.
    pub fn model(&self) -> Result<SampleModel> {
        Ok(match &self.contamination {
            Contamination::None => SampleModel::Vmf(self.true_xi.clone()),
            Contamination::Uniform { epsilon } => {
                SampleModel::Mixture(MixtureModel::new(*epsilon, self.true_xi.clone(), Contaminant::Uniform)?)
            }
            Contamination::Vmf { zeta, epsilon } => SampleModel::Mixture(MixtureModel::new(
                *epsilon,
                self.true_xi.clone(),
                Contaminant::Vmf { eta: zeta.clone() },
            )?),
        })
    }

    /// MLE first, then the listed estimators with duplicates of it removed.
    pub fn estimator_list(&self) -> Vec<EstimatorKind> {
        let mut out = vec![EstimatorKind::Mle];
        for k in &self.estimators {
            if !out.contains(k) {
                out.push(*k);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub label: String,
    pub estimator: EstimatorKind,
    pub converged: usize,
    /// Fits that stopped at `max_iter`; their last iterate is kept.
    pub non_converged: usize,
    /// Fits that produced no estimate at all.
    pub failed: usize,
    /// `Σ‖ξ̂ - ξ‖² / R` over converged fits only.
    pub mse: Option<f64>,
    pub relative_mse: Option<f64>,
    /// Same, also counting the last iterate of non-converged fits.
    pub retained_mse: Option<f64>,
    pub retained_relative_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub p: usize,
    pub n: usize,
    pub epsilon: f64,
    pub replicates: usize,
    pub seed: u64,
    /// MLE first.
    pub estimators: Vec<EstimatorSummary>,
}

impl SimulationReport {
    pub fn get(&self, kind: &EstimatorKind) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|s| &s.estimator == kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Outcome {
    Converged(f64),
    Stopped(f64),
    Failed,
}

fn sq_err(est: &[f64], truth: &[f64]) -> f64 {
    est.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn one_fit(kind: EstimatorKind, data: &[crate::vmf_model::UnitVector], spec: &SimulationSpec) -> Outcome {
    let truth = spec.true_xi.as_slice();
    match fit(kind, data, &spec.fit) {
        Ok(r) if r.xi_hat.as_slice().iter().all(|v| v.is_finite()) => {
            Outcome::Converged(sq_err(r.xi_hat.as_slice(), truth))
        }
        Err(VmfError::NonConvergence { last_iterate, .. }) if last_iterate.iter().all(|v| v.is_finite()) => {
            Outcome::Stopped(sq_err(&last_iterate, truth))
        }
        _ => Outcome::Failed,
    }
}

fn replicate(spec: &SimulationSpec, model: &SampleModel, kinds: &[EstimatorKind], r: usize) -> Result<Vec<Outcome>> {
    let data = sample_with(model, spec.n, &mut stream_rng(spec.seed, r as u64))?;
    Ok(kinds.iter().map(|k| one_fit(*k, &data, spec)).collect())
}

/// Runs every replicate of `spec` on the current rayon pool.
pub fn run_simulation(spec: &SimulationSpec) -> Result<SimulationReport> {
    spec.validate()?;
    let model = spec.model()?;
    let kinds = spec.estimator_list();
    let outcomes: Vec<Vec<Outcome>> = (0..spec.replicates)
        .into_par_iter()
        .map(|r| replicate(spec, &model, &kinds, r))
        .collect::<Result<_>>()?;

    let mut summaries = Vec::with_capacity(kinds.len());
    for (j, kind) in kinds.iter().enumerate() {
        let (mut conv, mut stop, mut fail) = (0usize, 0usize, 0usize);
        let (mut sum_conv, mut sum_all) = (0.0, 0.0);
        for row in &outcomes {
            match row[j] {
                Outcome::Converged(e) => {
                    conv += 1;
                    sum_conv += e;
                    sum_all += e;
                }
                Outcome::Stopped(e) => {
                    stop += 1;
                    sum_all += e;
                }
                Outcome::Failed => fail += 1,
            }
        }
        summaries.push(EstimatorSummary {
            label: kind.label(),
            estimator: *kind,
            converged: conv,
            non_converged: stop,
            failed: fail,
            mse: (conv > 0).then(|| sum_conv / conv as f64),
            relative_mse: None,
            retained_mse: (conv + stop > 0).then(|| sum_all / (conv + stop) as f64),
            retained_relative_mse: None,
        });
    }
    let base_mse = summaries[0].mse;
    let base_retained = summaries[0].retained_mse;
    let ratio = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    };
    for s in &mut summaries {
        s.relative_mse = ratio(s.mse, base_mse);
        s.retained_relative_mse = ratio(s.retained_mse, base_retained);
    }
    Ok(SimulationReport {
        p: spec.p,
        n: spec.n,
        epsilon: spec.contamination.epsilon(),
        replicates: spec.replicates,
        seed: spec.seed,
        estimators: summaries,
    })
}

/// Column variable of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "lowercase")]
pub enum SweepAxis {
    N(Vec<usize>),
    Epsilon(Vec<f64>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::N(_) => "n",
            SweepAxis::Epsilon(_) => "epsilon",
        }
    }

    fn len(&self) -> usize {
        match self {
            SweepAxis::N(v) => v.len(),
            SweepAxis::Epsilon(v) => v.len(),
        }
    }
}

/// Rows are `families × tunings`; columns are the values of `columns`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub families: Vec<RobustFamily>,
    pub tunings: Vec<f64>,
    pub columns: SweepAxis,
}

/// A simulation config file: one design, optionally swept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub simulation: SimulationSpec,
    pub sweep: Option<SweepSpec>,
}

impl SimulationConfig {
    /// Parses TOML, reporting the path of the offending key on failure.
    pub fn from_toml(text: &str) -> Result<SimulationConfig> {
        let de = toml::Deserializer::parse(text).map_err(|e| VmfError::InvalidConfig(e.to_string()))?;
        let cfg: SimulationConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| VmfError::InvalidConfig(format!("at `{}`: {}", e.path(), e.inner())))?;
        cfg.simulation.validate()?;
        if let Some(s) = &cfg.sweep {
            sweep_cells(&cfg.simulation, s)?;
        }
        Ok(cfg)
    }
}

/// Per-cell specs of a sweep. Cell `c` is seeded with
/// `derive_seed(base.seed, c)` and runs every row estimator on the same data.
pub fn sweep_cells(base: &SimulationSpec, sweep: &SweepSpec) -> Result<Vec<SimulationSpec>> {
    if sweep.families.is_empty() || sweep.tunings.is_empty() || sweep.columns.len() == 0 {
        return Err(VmfError::InvalidConfig("sweep families, tunings and column values must be nonempty".into()));
    }
    let estimators: Vec<EstimatorKind> = sweep
        .families
        .iter()
        .flat_map(|f| sweep.tunings.iter().map(move |t| f.with_tuning(*t)))
        .collect();
    let mut cells = Vec::with_capacity(sweep.columns.len());
    for c in 0..sweep.columns.len() {
        let mut spec = base.clone();
        spec.estimators = estimators.clone();
        spec.seed = derive_seed(base.seed, c as u64);
        match &sweep.columns {
            SweepAxis::N(v) => spec.n = v[c],
            SweepAxis::Epsilon(v) => spec.contamination = base.contamination.with_epsilon(v[c])?,
        }
        spec.validate()?;
        cells.push(spec);
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: String,
    pub column_values: Vec<f64>,
    pub rows: Vec<EstimatorKind>,
    pub cells: Vec<SimulationReport>,
}

/// Runs every cell of a sweep, one after the other.
pub fn table_sweep(base: &SimulationSpec, sweep: &SweepSpec) -> Result<SweepReport> {
    let specs = sweep_cells(base, sweep)?;
    let cells = specs.iter().map(run_simulation).collect::<Result<Vec<_>>>()?;
    let column_values = match &sweep.columns {
        SweepAxis::N(v) => v.iter().map(|n| *n as f64).collect(),
        SweepAxis::Epsilon(v) => v.clone(),
    };
    Ok(SweepReport {
        axis: sweep.columns.name().to_string(),
        column_values,
        rows: specs[0].estimators.clone(),
        cells,
    })
}

/// Column order of [`write_long_csv`].
pub const LONG_CSV_HEADER: [&str; 15] = [
    "cell",
    "n",
    "epsilon",
    "seed",
    "replicates",
    "estimator",
    "tuning",
    "converged",
    "non_converged",
    "failed",
    "mse",
    "relative_mse",
    "retained_mse",
    "retained_relative_mse",
    "p",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: impl std::fmt::Display) -> VmfError {
    VmfError::InvalidConfig(format!("cannot write CSV: {e}"))
}

/// One row per (cell, estimator).
pub fn write_long_csv<W: Write>(cells: &[SimulationReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LONG_CSV_HEADER).map_err(csv_err)?;
    for (c, r) in cells.iter().enumerate() {
        for s in &r.estimators {
            let kind = match s.estimator {
                EstimatorKind::Mle => "mle",
                EstimatorKind::Type1 { .. } => "type1",
                EstimatorKind::Type0 { .. } => "type0",
            };
            w.write_record([
                c.to_string(),
                r.n.to_string(),
                r.epsilon.to_string(),
                r.seed.to_string(),
                r.replicates.to_string(),
                kind.to_string(),
                opt(s.estimator.tuning()),
                s.converged.to_string(),
                s.non_converged.to_string(),
                s.failed.to_string(),
                opt(s.mse),
                opt(s.relative_mse),
                opt(s.retained_mse),
                opt(s.retained_relative_mse),
                r.p.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(csv_err)?;
    Ok(())
}

/// Relative MSEs laid out with one row per estimator and one column per
/// sweep value.
pub fn write_table_csv<W: Write>(report: &SweepReport, retained: bool, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["estimator".to_string(), "tuning".to_string()];
    header.extend(report.column_values.iter().map(|v| format!("{}={}", report.axis, v)));
    w.write_record(&header).map_err(csv_err)?;
    for kind in &report.rows {
        let mut row = vec![
            match kind {
                EstimatorKind::Mle => "mle".to_string(),
                EstimatorKind::Type1 { .. } => "type1".to_string(),
                EstimatorKind::Type0 { .. } => "type0".to_string(),
            },
            opt(kind.tuning()),
        ];
        for cell in &report.cells {
            let s = cell.get(kind);
            row.push(opt(s.and_then(|s| if retained { s.retained_relative_mse } else { s.relative_mse })));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)?;
    Ok(())
}
