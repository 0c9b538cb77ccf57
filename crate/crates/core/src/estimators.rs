//! Point estimators of `ξ`: maximum likelihood, the type 1 (`β`) and type 0
//! (`γ`) minimum-divergence fixed points, and Lenth's circular M-estimator.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VmfError};
use crate::moments::log_sum_exp;
use crate::quadrature::integrate_circle_vec;
use crate::special::{self, Dimension};
use crate::vmf_model::{dot, NaturalParam, UnitVector};

/// Mean resultant lengths at or above this are treated as all-identical data.
pub const DEGENERATE_RESULTANT: f64 = 1.0 - 1e-12;

/// Which estimator to run, with its tuning value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EstimatorKind {
    Mle,
    Type1 { tuning: f64 },
    Type0 { tuning: f64 },
}

impl EstimatorKind {
    pub fn tuning(&self) -> Option<f64> {
        match *self {
            EstimatorKind::Mle => None,
            EstimatorKind::Type1 { tuning } | EstimatorKind::Type0 { tuning } => Some(tuning),
        }
    }

    /// Short label such as `type1(0.25)`.
    pub fn label(&self) -> String {
        match *self {
            EstimatorKind::Mle => "mle".to_string(),
            EstimatorKind::Type1 { tuning } => format!("type1({tuning})"),
            EstimatorKind::Type0 { tuning } => format!("type0({tuning})"),
        }
    }
}

/// The two minimum-divergence families, without a tuning value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RobustFamily {
    Type1,
    Type0,
}

impl RobustFamily {
    pub fn with_tuning(self, t: f64) -> EstimatorKind {
        match self {
            RobustFamily::Type1 => EstimatorKind::Type1 { tuning: t },
            RobustFamily::Type0 => EstimatorKind::Type0 { tuning: t },
        }
    }
}

/// Starting point of the fixed-point iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    #[default]
    Mle,
    Explicit(NaturalParam),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub max_iter: usize,
    /// Convergence threshold on `‖ξ_{t+1} - ξ_t‖`.
    pub tol: f64,
    pub init: Init,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig { max_iter: 500, tol: 1e-10, init: Init::Mle }
    }
}

impl EstimatorConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(VmfError::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(VmfError::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// `‖ξ_{t+1} - ξ_t‖`.
    pub step: f64,
    /// Empirical `γ`-objective at `ξ_{t+1}` (type 0 only).
    pub objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub xi_hat: NaturalParam,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
    /// Objective at the starting point (type 0 only).
    pub initial_objective: Option<f64>,
    /// The weighted resultant vanished, so the direction is undefined and
    /// `ξ̂ = 0` was returned.
    pub zero_resultant: bool,
}

/// Validated data with normalised weights.
struct Weighted<'a> {
    data: &'a [UnitVector],
    weights: Vec<f64>,
    p: Dimension,
}

fn prepare<'a>(data: &'a [UnitVector], weights: Option<&[f64]>) -> Result<Weighted<'a>> {
    let first = data
        .first()
        .ok_or_else(|| VmfError::DegenerateData("no observations".into()))?;
    let p = first.dimension();
    for x in data {
        if x.dim() != p.get() {
            return Err(VmfError::DimensionMismatch { expected: p.get(), found: x.dim() });
        }
    }
    let weights = match weights {
        None => vec![1.0 / data.len() as f64; data.len()],
        Some(w) => {
            if w.len() != data.len() {
                return Err(VmfError::DimensionMismatch { expected: data.len(), found: w.len() });
            }
            if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(VmfError::domain("observation weights must be finite and nonnegative"));
            }
            let total: f64 = w.iter().sum();
            if !(total > 0.0) {
                return Err(VmfError::domain("observation weights sum to zero"));
            }
            w.iter().map(|v| v / total).collect()
        }
    };
    Ok(Weighted { data, weights, p })
}

/// `(Σ ω_j e^{s'x_j - m} x_j, Σ ω_j e^{s'x_j - m}, m)` with `m` the largest
/// exponent, so the sums stay finite for any concentration.
fn tilted_sums(w: &Weighted, shift: &[f64]) -> (Vec<f64>, f64, f64) {
    let expo: Vec<f64> = w.data.iter().map(|x| dot(shift, x.coords())).collect();
    let m = expo.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = vec![0.0; w.p.get()];
    let mut total = 0.0;
    for ((x, e), om) in w.data.iter().zip(&expo).zip(&w.weights) {
        let u = om * (e - m).exp();
        total += u;
        for (k, c) in x.coords().iter().enumerate() {
            s[k] += u * c;
        }
    }
    (s, total, m)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn resultant_is_zero(s: &[f64], scale: f64) -> bool {
    norm(s) <= 1e-14 * scale
}

fn check_not_degenerate(w: &Weighted) -> Result<()> {
    let (s, total, _) = tilted_sums(w, &vec![0.0; w.p.get()]);
    let rbar = norm(&s) / total;
    if rbar >= DEGENERATE_RESULTANT {
        return Err(VmfError::DegenerateData(format!(
            "mean resultant length {rbar} is 1: all observations coincide"
        )));
    }
    Ok(())
}

fn mle_core(w: &Weighted) -> Result<FitResult> {
    check_not_degenerate(w)?;
    let (s, total, _) = tilted_sums(w, &vec![0.0; w.p.get()]);
    let zero = resultant_is_zero(&s, total);
    let xi = if zero {
        NaturalParam::zeros(w.p)
    } else {
        let r = norm(&s);
        let kappa = special::a_ratio_inv(w.p, r / total)?;
        NaturalParam::new(s.iter().map(|c| kappa * c / r).collect())?
    };
    Ok(FitResult {
        xi_hat: xi,
        iterations: 0,
        converged: true,
        trace: Vec::new(),
        initial_objective: None,
        zero_resultant: zero,
    })
}

/// Maximum likelihood estimate `A_p^{-1}(R̄) Σx_j/‖Σx_j‖`.
pub fn fit_mle(data: &[UnitVector]) -> Result<FitResult> {
    mle_core(&prepare(data, None)?)
}

/// Maximum likelihood with observation weights (normalised to sum to one).
pub fn fit_mle_weighted(data: &[UnitVector], weights: &[f64]) -> Result<FitResult> {
    mle_core(&prepare(data, Some(weights))?)
}

/// `ln d(κ)` where `d μ` is the correction term of the type 1 equation,
/// `d = I_ν((1+β)κ) [A_p((1+β)κ) - A_p(κ)] / {(1+β)^ν I_ν(κ)}`.
pub(crate) fn log_type1_shift(p: Dimension, beta: f64, kappa: f64) -> Result<f64> {
    if kappa == 0.0 || beta == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let nu = p.nu();
    let s = (1.0 + beta) * kappa;
    let log_k1 = special::log_bessel_i_scaled(nu, s)? - special::log_bessel_i_scaled(nu, kappa)? + beta * kappa
        - nu * (1.0 + beta).ln();
    let gap = special::a_ratio(p, s)? - special::a_ratio(p, kappa)?;
    Ok(log_k1 + gap.max(0.0).ln())
}

fn initial_xi(w: &Weighted, cfg: &EstimatorConfig) -> Result<NaturalParam> {
    match &cfg.init {
        Init::Mle => Ok(mle_core(w)?.xi_hat),
        Init::Explicit(xi) => {
            if xi.dim() != w.p.get() {
                return Err(VmfError::DimensionMismatch { expected: w.p.get(), found: xi.dim() });
            }
            Ok(xi.clone())
        }
    }
}

fn check_tuning(v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(VmfError::domain(format!("tuning value must be finite and >= 0, got {v}")));
    }
    Ok(())
}

/// One fixed-point map evaluation; `None` when the resultant vanishes.
type Step<'s> = dyn FnMut(&NaturalParam, usize) -> Result<Option<NaturalParam>> + 's;

fn iterate(
    w: &Weighted,
    cfg: &EstimatorConfig,
    step: &mut Step,
    mut objective: Option<&mut dyn FnMut(&NaturalParam) -> f64>,
) -> Result<FitResult> {
    cfg.validate()?;
    check_not_degenerate(w)?;
    let mut xi = initial_xi(w, cfg)?;
    let initial_objective = objective.as_mut().map(|f| f(&xi));
    let mut trace = Vec::new();
    for it in 1..=cfg.max_iter {
        let next = match step(&xi, it)? {
            Some(n) => n,
            None => {
                let zero = NaturalParam::zeros(w.p);
                let d = xi.kappa();
                trace.push(TraceEntry { step: d, objective: objective.as_mut().map(|f| f(&zero)) });
                return Ok(FitResult {
                    xi_hat: zero,
                    iterations: it,
                    converged: true,
                    trace,
                    initial_objective,
                    zero_resultant: true,
                });
            }
        };
        let d = norm(
            &next
                .as_slice()
                .iter()
                .zip(xi.as_slice())
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        );
        trace.push(TraceEntry { step: d, objective: objective.as_mut().map(|f| f(&next)) });
        xi = next;
        if d <= cfg.tol {
            return Ok(FitResult {
                xi_hat: xi,
                iterations: it,
                converged: true,
                trace,
                initial_objective,
                zero_resultant: false,
            });
        }
    }
    Err(VmfError::NonConvergence {
        iterations: cfg.max_iter,
        last_step: trace.last().map(|t| t.step).unwrap_or(f64::NAN),
        last_iterate: xi.into_inner(),
    })
}

fn invert_resultant(p: Dimension, r: f64, it: usize) -> Result<f64> {
    if !(r < 1.0) || !r.is_finite() {
        return Err(VmfError::Diverged {
            iteration: it,
            reason: format!("mean-resultant argument {r} left [0, 1)"),
        });
    }
    special::a_ratio_inv(p, r.max(0.0))
}

fn type1_core(w: &Weighted, beta: f64, cfg: &EstimatorConfig) -> Result<FitResult> {
    check_tuning(beta)?;
    let p = w.p;
    let mut step = |xi: &NaturalParam, it: usize| -> Result<Option<NaturalParam>> {
        let shift: Vec<f64> = xi.as_slice().iter().map(|v| beta * v).collect();
        let (s, total, m) = tilted_sums(w, &shift);
        if resultant_is_zero(&s, total) {
            return Ok(None);
        }
        let kappa = xi.kappa();
        let mut v = s.clone();
        if kappa > 0.0 {
            let d = (log_type1_shift(p, beta, kappa)? - m).exp();
            for (k, c) in v.iter_mut().enumerate() {
                *c -= d * xi.as_slice()[k] / kappa;
            }
        }
        let k_new = invert_resultant(p, norm(&v) / total, it)?;
        let sn = norm(&s);
        Ok(Some(NaturalParam::new(s.iter().map(|c| k_new * c / sn).collect())?))
    };
    iterate(w, cfg, &mut step, None)
}

/// Type 1 estimate: fixed point of its estimating equation.
pub fn fit_type1(data: &[UnitVector], beta: f64, cfg: &EstimatorConfig) -> Result<FitResult> {
    type1_core(&prepare(data, None)?, beta, cfg)
}

pub fn fit_type1_weighted(data: &[UnitVector], weights: &[f64], beta: f64, cfg: &EstimatorConfig) -> Result<FitResult> {
    type1_core(&prepare(data, Some(weights))?, beta, cfg)
}

fn gamma_objective_core(w: &Weighted, gamma: f64, xi: &NaturalParam) -> Result<f64> {
    let terms: Vec<f64> = w
        .data
        .iter()
        .zip(&w.weights)
        .map(|(x, om)| om.ln() + gamma * dot(xi.as_slice(), x.coords()))
        .collect();
    let log_mean = log_sum_exp(&terms);
    let lc_tilt = special::log_vmf_norm_const(w.p, (1.0 + gamma) * xi.kappa())?;
    Ok(-log_mean / gamma - lc_tilt / (1.0 + gamma))
}

/// The part of `d_γ(ḡ, f_ξ)` that depends on `ξ`, with `ḡ` the empirical
/// distribution of `data`.
pub fn empirical_gamma_objective(data: &[UnitVector], gamma: f64, xi: &NaturalParam) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(VmfError::domain(format!("gamma must be positive, got {gamma}")));
    }
    let w = prepare(data, None)?;
    if xi.dim() != w.p.get() {
        return Err(VmfError::DimensionMismatch { expected: w.p.get(), found: xi.dim() });
    }
    gamma_objective_core(&w, gamma, xi)
}

fn type0_core(w: &Weighted, gamma: f64, cfg: &EstimatorConfig) -> Result<FitResult> {
    check_tuning(gamma)?;
    let p = w.p;
    let mut step = |xi: &NaturalParam, it: usize| -> Result<Option<NaturalParam>> {
        let shift: Vec<f64> = xi.as_slice().iter().map(|v| gamma * v).collect();
        let (s, total, _) = tilted_sums(w, &shift);
        if resultant_is_zero(&s, total) {
            return Ok(None);
        }
        let sn = norm(&s);
        let k_new = invert_resultant(p, sn / total, it)? / (1.0 + gamma);
        Ok(Some(NaturalParam::new(s.iter().map(|c| k_new * c / sn).collect())?))
    };
    if gamma > 0.0 {
        let mut obj = |xi: &NaturalParam| gamma_objective_core(w, gamma, xi).unwrap_or(f64::NAN);
        iterate(w, cfg, &mut step, Some(&mut obj))
    } else {
        iterate(w, cfg, &mut step, None)
    }
}

/// Type 0 estimate: fixed point of its estimating equation.
pub fn fit_type0(data: &[UnitVector], gamma: f64, cfg: &EstimatorConfig) -> Result<FitResult> {
    type0_core(&prepare(data, None)?, gamma, cfg)
}

pub fn fit_type0_weighted(data: &[UnitVector], weights: &[f64], gamma: f64, cfg: &EstimatorConfig) -> Result<FitResult> {
    type0_core(&prepare(data, Some(weights))?, gamma, cfg)
}

/// Runs the estimator named by `kind`.
pub fn fit(kind: EstimatorKind, data: &[UnitVector], cfg: &EstimatorConfig) -> Result<FitResult> {
    match kind {
        EstimatorKind::Mle => fit_mle(data),
        EstimatorKind::Type1 { tuning } => fit_type1(data, tuning, cfg),
        EstimatorKind::Type0 { tuning } => fit_type0(data, tuning, cfg),
    }
}

pub fn fit_weighted(kind: EstimatorKind, data: &[UnitVector], weights: &[f64], cfg: &EstimatorConfig) -> Result<FitResult> {
    match kind {
        EstimatorKind::Mle => fit_mle_weighted(data, weights),
        EstimatorKind::Type1 { tuning } => fit_type1_weighted(data, weights, tuning, cfg),
        EstimatorKind::Type0 { tuning } => fit_type0_weighted(data, weights, tuning, cfg),
    }
}

/// `ψ` function behind Lenth's weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsiKind {
    Huber,
    Andrews,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LenthConfig {
    pub psi_kind: PsiKind,
    pub c: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LenthConfig {
    fn default() -> Self {
        LenthConfig { psi_kind: PsiKind::Huber, c: 1.5, max_iter: 500, tol: 1e-10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LenthFit {
    /// Mean direction in radians, in `(-π, π]`.
    pub mu_hat: f64,
    pub kappa_hat: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Weight `ψ(t)/t` for the standardised residual
/// `t(φ; κ) = ±{2κ(1 - cos φ)}^{1/2}`.
pub fn lenth_weight(kind: PsiKind, c: f64, phi: f64, kappa: f64) -> f64 {
    // 2κ(1 - cos φ) = 4κ sin²(φ/2); the sign of t cancels in ψ(t)/t.
    let t = 2.0 * kappa.sqrt() * (0.5 * phi).sin().abs();
    if t == 0.0 {
        return 1.0;
    }
    match kind {
        PsiKind::Huber => (c / t).min(1.0),
        PsiKind::Andrews => {
            if t <= c * PI {
                c * (t / c).sin() / t
            } else {
                0.0
            }
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Lenth's estimator of `(μ, κ)` for angles on the circle.
pub fn fit_lenth(angles: &[f64], cfg: &LenthConfig) -> Result<LenthFit> {
    if angles.len() < 2 {
        return Err(VmfError::DegenerateData("Lenth's estimator needs at least two angles".into()));
    }
    if !(cfg.c > 0.0) {
        return Err(VmfError::InvalidConfig(format!("c must be positive, got {}", cfg.c)));
    }
    if cfg.max_iter < 1 || !(cfg.tol > 0.0) {
        return Err(VmfError::InvalidConfig("max_iter must be >= 1 and tol positive".into()));
    }
    if angles.iter().any(|a| !a.is_finite()) {
        return Err(VmfError::domain("angles must be finite"));
    }
    let points: Vec<UnitVector> = angles.iter().map(|&a| UnitVector::from_angle(a)).collect();
    let start = fit_mle(&points)?;
    let xi = start.xi_hat.as_slice();
    let mut mu = xi[1].atan2(xi[0]);
    let mut kappa = start.xi_hat.kappa();
    let p = Dimension::CIRCLE;
    for it in 1..=cfg.max_iter {
        let (mut sw, mut sc, mut ss) = (0.0, 0.0, 0.0);
        for &th in angles {
            let w = lenth_weight(cfg.psi_kind, cfg.c, th - mu, kappa);
            sw += w;
            sc += w * th.cos();
            ss += w * th.sin();
        }
        if !(sw > 0.0) {
            return Err(VmfError::DegenerateData("all Lenth weights vanished".into()));
        }
        let rbar = (sc * sc + ss * ss).sqrt() / sw;
        if rbar >= DEGENERATE_RESULTANT {
            return Err(VmfError::DegenerateData(format!("weighted mean resultant length {rbar} is 1")));
        }
        let mu_new = ss.atan2(sc);
        let kappa_new = special::a_ratio_inv(p, rbar)?;
        let step = wrap_angle(mu_new - mu).abs() + (kappa_new - kappa).abs();
        mu = mu_new;
        kappa = kappa_new;
        if step <= cfg.tol {
            return Ok(LenthFit { mu_hat: mu, kappa_hat: kappa, iterations: it, converged: true });
        }
    }
    Err(VmfError::NonConvergence {
        iterations: cfg.max_iter,
        last_step: f64::NAN,
        last_iterate: vec![kappa * mu.cos(), kappa * mu.sin()],
    })
}

/// `∫ w cos θ f / ∫ w f` under `vM_2(κ, 0)`, with Lenth's weights evaluated
/// at the true parameters. Fisher consistency of `κ̂` would need this to
/// equal `A_2(κ)`.
pub fn lenth_population_ratio(kind: PsiKind, c: f64, kappa: f64) -> Result<f64> {
    let v = integrate_circle_vec(
        |x, out| {
            let theta = x[1].atan2(x[0]);
            let w = lenth_weight(kind, c, theta, kappa) * (kappa * (x[0] - 1.0)).exp();
            out[0] = w * x[0];
            out[1] = w;
        },
        2,
    )?;
    Ok(v[0] / v[1])
}
