//! K-fold cross-validation for the tuning value of the type 1 and type 0
//! estimators.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergences::{pointwise_cv_loss, TuningKind};
use crate::error::{Result, VmfError};
use crate::estimators::{fit, EstimatorConfig, RobustFamily};
use crate::vmf_model::{stream_rng, UnitVector};

/// Held-out losses use the divergence the estimator minimises.
pub fn loss_kind(est: RobustFamily) -> TuningKind {
    match est {
        RobustFamily::Type1 => TuningKind::Beta,
        RobustFamily::Type0 => TuningKind::Gamma,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSpec {
    pub grid: Vec<f64>,
    pub folds: usize,
    pub loss_param: f64,
    pub seed: u64,
    pub fit: EstimatorConfig,
}

impl Default for CvSpec {
    fn default() -> Self {
        CvSpec { grid: default_grid(), folds: 3, loss_param: 0.6, seed: 0, fit: EstimatorConfig::default() }
    }
}

/// `0.01, 0.02, …, 1.00`.
pub fn default_grid() -> Vec<f64> {
    (1..=100).map(|h| h as f64 / 100.0).collect()
}

impl CvSpec {
    fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(VmfError::InvalidConfig("tuning grid is empty".into()));
        }
        if let Some(bad) = self.grid.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return Err(VmfError::InvalidConfig(format!("tuning values must lie in (0, 1], got {bad}")));
        }
        if self.folds < 2 {
            return Err(VmfError::InvalidConfig(format!("need at least 2 folds, got {}", self.folds)));
        }
        if !(self.loss_param > 0.0) || !self.loss_param.is_finite() {
            return Err(VmfError::InvalidConfig(format!("loss_param must be positive, got {}", self.loss_param)));
        }
        Ok(())
    }
}

/// CV score of one candidate. `score` is `None` when some fold fit failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub tuning: f64,
    pub score: Option<f64>,
    /// Folds whose fit or held-out loss failed, with the error message.
    pub failures: Vec<FoldFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldFailure {
    pub fold: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub estimator: RobustFamily,
    pub best: f64,
    pub best_score: f64,
    pub curve: Vec<CvPoint>,
    /// Fold index of every observation.
    pub fold_assignment: Vec<usize>,
}

/// Seeded random split into `folds` groups whose sizes differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, 0));
    let mut out = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = pos % folds;
    }
    out
}

fn check_assignment(n: usize, folds: usize, assignment: &[usize]) -> Result<()> {
    if n < folds {
        return Err(VmfError::domain(format!("{n} observations cannot fill {folds} folds")));
    }
    if assignment.len() != n {
        return Err(VmfError::DimensionMismatch { expected: n, found: assignment.len() });
    }
    let mut sizes = vec![0usize; folds];
    for &f in assignment {
        if f >= folds {
            return Err(VmfError::domain(format!("fold index {f} out of range for {folds} folds")));
        }
        sizes[f] += 1;
    }
    if let Some(l) = sizes.iter().position(|&s| n - s < 2) {
        return Err(VmfError::domain(format!("fold {l} leaves fewer than 2 training points")));
    }
    Ok(())
}

/// Sum of held-out losses on fold `l`, or the first error met.
fn fold_loss(data: &[UnitVector], est: RobustFamily, spec: &CvSpec, assignment: &[usize], t: f64, l: usize) -> Result<f64> {
    let train: Vec<UnitVector> = data
        .iter()
        .zip(assignment)
        .filter(|(_, f)| **f != l)
        .map(|(x, _)| x.clone())
        .collect();
    let fitted = fit(est.with_tuning(t), &train, &spec.fit)?;
    let mut total = 0.0;
    for (x, _) in data.iter().zip(assignment).filter(|(_, f)| **f == l) {
        total += pointwise_cv_loss(loss_kind(est), spec.loss_param, &fitted.xi_hat, x)?;
    }
    Ok(total)
}

/// CV curve for a given fold assignment.
pub fn cv_curve(data: &[UnitVector], est: RobustFamily, spec: &CvSpec, assignment: &[usize]) -> Result<Vec<CvPoint>> {
    spec.validate()?;
    check_assignment(data.len(), spec.folds, assignment)?;
    let jobs: Vec<(usize, usize)> = (0..spec.grid.len())
        .flat_map(|c| (0..spec.folds).map(move |l| (c, l)))
        .collect();
    let losses: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(c, l)| fold_loss(data, est, spec, assignment, spec.grid[c], l))
        .collect();
    let n = data.len() as f64;
    let curve = spec
        .grid
        .iter()
        .enumerate()
        .map(|(c, &t)| {
            let mut sum = 0.0;
            let mut failures = Vec::new();
            for l in 0..spec.folds {
                match &losses[c * spec.folds + l] {
                    Ok(v) => sum += v,
                    Err(e) => failures.push(FoldFailure { fold: l, error: e.to_string() }),
                }
            }
            CvPoint { tuning: t, score: failures.is_empty().then_some(sum / n), failures }
        })
        .collect();
    Ok(curve)
}

/// Minimiser of the CV score over `spec.grid`; ties go to the smaller value.
pub fn cross_validate(data: &[UnitVector], est: RobustFamily, spec: &CvSpec) -> Result<CvResult> {
    spec.validate()?;
    if data.len() < spec.folds {
        return Err(VmfError::domain(format!("{} observations cannot fill {} folds", data.len(), spec.folds)));
    }
    let assignment = fold_assignment(data.len(), spec.folds, spec.seed);
    let curve = cv_curve(data, est, spec, &assignment)?;
    let mut best: Option<(f64, f64)> = None;
    for pt in &curve {
        if let Some(s) = pt.score {
            let better = match best {
                None => true,
                Some((bt, bs)) => s < bs || (s == bs && pt.tuning < bt),
            };
            if better {
                best = Some((pt.tuning, s));
            }
        }
    }
    let (best, best_score) = best
        .ok_or_else(|| VmfError::DegenerateData("no tuning candidate produced a valid CV score".into()))?;
    Ok(CvResult { estimator: est, best, best_score, curve, fold_assignment: assignment })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vmf_model::{sample, NaturalParam, SampleModel};

    #[test]
    fn folds_are_balanced() {
        let a = fold_assignment(11, 3, 5);
        let mut sizes = [0; 3];
        for f in &a {
            sizes[*f] += 1;
        }
        assert_eq!(sizes, [4, 4, 3]);
        assert_eq!(a, fold_assignment(11, 3, 5));
    }

    #[test]
    fn too_few_points() {
        let data = vec![UnitVector::from_angle(0.1)];
        let spec = CvSpec { folds: 2, ..CvSpec::default() };
        assert!(matches!(cross_validate(&data, RobustFamily::Type1, &spec), Err(VmfError::Domain(_))));
    }

    #[test]
    fn curve_reproduces_from_assignment() {
        let xi = NaturalParam::new(vec![2.37, 0.0]).unwrap();
        let data = sample(&SampleModel::Vmf(xi), 40, 3).unwrap();
        let spec = CvSpec { grid: vec![0.1, 0.3, 0.5], seed: 9, ..CvSpec::default() };
        let res = cross_validate(&data, RobustFamily::Type0, &spec).unwrap();
        let again = cv_curve(&data, RobustFamily::Type0, &spec, &res.fold_assignment).unwrap();
        assert_eq!(res.curve, again);
        assert!(res.curve.iter().all(|p| p.score.is_some()));
    }
}
