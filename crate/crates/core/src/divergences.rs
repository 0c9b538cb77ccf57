//! Density-power divergences between a vMF model and a data density:
//! Kullback-Leibler, the `β`-divergence and the `γ`-divergence,
//! plus the point-mass losses used for cross-validation.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VmfError};
use crate::moments::{log_sum_exp, mixture_tilted};
use crate::quadrature::{integrate_circle, integrate_sphere3};
use crate::special;
use crate::vmf_model::{log_density, log_norm_const, MixtureModel, NaturalParam, UnitVector};

/// Which divergence family a tuning value belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TuningKind {
    Beta,
    Gamma,
}

/// A tuning value `β` or `γ`; zero is the Kullback-Leibler limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningParam {
    pub value: f64,
    pub kind: TuningKind,
}

impl TuningParam {
    pub fn new(value: f64, kind: TuningKind) -> Result<Self> {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(VmfError::domain(format!("tuning value must be finite and >= 0, got {value}")));
        }
        Ok(TuningParam { value, kind })
    }

    pub fn beta(value: f64) -> Result<Self> {
        Self::new(value, TuningKind::Beta)
    }

    pub fn gamma(value: f64) -> Result<Self> {
        Self::new(value, TuningKind::Gamma)
    }
}

/// A divergence split into its additive terms.
///
/// `g_term` depends on the data density only. It is `None` when it could not
/// be evaluated (non-integer power of a genuine mixture for `p > 3`); `value`
/// then omits it and `complete` is false.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceValue {
    pub value: f64,
    pub g_term: Option<f64>,
    pub cross_term: f64,
    pub model_term: f64,
    pub complete: bool,
}

impl DivergenceValue {
    fn assemble(g_term: Option<f64>, cross_term: f64, model_term: f64) -> Self {
        DivergenceValue {
            value: g_term.unwrap_or(0.0) + cross_term + model_term,
            g_term,
            cross_term,
            model_term,
            complete: g_term.is_some(),
        }
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(VmfError::domain(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

fn check_same_dim(xi: &NaturalParam, g: &MixtureModel) -> Result<()> {
    if xi.dim() != g.dim() {
        return Err(VmfError::DimensionMismatch { expected: xi.dim(), found: g.dim() });
    }
    Ok(())
}

/// `ln ∫ f_ξ^a dx = a ln C(ξ) - ln C(aξ)`.
pub fn log_vmf_power_integral(xi: &NaturalParam, a: f64) -> Result<f64> {
    if !(a >= 1.0) || !a.is_finite() {
        return Err(VmfError::domain(format!("power must be >= 1, got {a}")));
    }
    if a == 1.0 {
        return Ok(0.0);
    }
    let p = xi.dimension();
    let k = xi.kappa();
    Ok(a * special::log_vmf_norm_const(p, k)? - special::log_vmf_norm_const(p, a * k)?)
}

/// `∫ f_ξ^a dx`.
pub fn vmf_power_integral(xi: &NaturalParam, a: f64) -> Result<f64> {
    log_vmf_power_integral(xi, a).map(f64::exp)
}

/// `ln ∫ e^{a ξ'x} g(x) dx`.
pub fn log_tilted_mass(g: &MixtureModel, xi: &NaturalParam, a: f64) -> Result<f64> {
    check_same_dim(xi, g)?;
    let terms: Vec<f64> = mixture_tilted(g, xi, a)?
        .into_iter()
        .map(|(w, t)| w.ln() + t.log_mass)
        .collect();
    Ok(log_sum_exp(&terms))
}

/// Quadrature of `h(x)` over the sphere for `p ∈ {2, 3}`.
pub(crate) fn sphere_quadrature<F>(p: usize, mut h: F) -> Result<Option<f64>>
where
    F: FnMut(&UnitVector) -> f64,
{
    match p {
        2 => integrate_circle(|x| h(&UnitVector::new(x.to_vec()).expect("quadrature node on circle")))
            .map(Some),
        3 => integrate_sphere3(|x| h(&UnitVector::normalize(x.to_vec()).expect("quadrature node on sphere")))
            .map(Some),
        _ => Ok(None),
    }
}

fn ln_binomial(n: u64, k: u64) -> f64 {
    statrs::function::factorial::ln_binomial(n, k)
}

/// `ln ∫ g^a dx` for the mixture `g`.
///
/// Closed form for a single component or an integer power; quadrature for
/// other powers when `p ∈ {2, 3}`; `None` otherwise.
pub fn log_mixture_power_integral(g: &MixtureModel, a: f64) -> Result<Option<f64>> {
    if !(a >= 1.0) || !a.is_finite() {
        return Err(VmfError::domain(format!("power must be >= 1, got {a}")));
    }
    let comps = g.components();
    if comps.len() == 1 {
        return log_vmf_power_integral(&comps[0].1, a).map(Some);
    }
    if a.fract() == 0.0 && a <= 64.0 {
        let n = a as u64;
        let p = g.dimension();
        let xi = &g.primary;
        let eta = g.contaminant_param();
        let lc_xi = log_norm_const(xi)?;
        let lc_eta = log_norm_const(&eta)?;
        let (lw1, lw2) = ((1.0 - g.epsilon).ln(), g.epsilon.ln());
        let mut terms = Vec::with_capacity(n as usize + 1);
        for k in 0..=n {
            let kf = k as f64;
            let mf = (n - k) as f64;
            let combo: Vec<f64> = xi
                .as_slice()
                .iter()
                .zip(eta.as_slice())
                .map(|(x, e)| kf * x + mf * e)
                .collect();
            let kappa = combo.iter().map(|c| c * c).sum::<f64>().sqrt();
            terms.push(
                ln_binomial(n, k) + kf * (lw1 + lc_xi) + mf * (lw2 + lc_eta)
                    - special::log_vmf_norm_const(p, kappa)?,
            );
        }
        return Ok(Some(log_sum_exp(&terms)));
    }
    let mut failure = None;
    let v = sphere_quadrature(g.dim(), |x| match g.density(x) {
        Ok(d) => d.powf(a),
        Err(e) => {
            failure.get_or_insert(e);
            0.0
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(v.map(f64::ln))
}

/// `d_β(g, f_ξ)` for a mixture data density `g`.
pub fn beta_divergence_vs_mixture(beta: f64, xi: &NaturalParam, g: &MixtureModel) -> Result<DivergenceValue> {
    check_positive("beta", beta)?;
    check_same_dim(xi, g)?;
    let g_term = log_mixture_power_integral(g, 1.0 + beta)?.map(|l| l.exp() / (beta * (1.0 + beta)));
    let cross = -(beta * log_norm_const(xi)? + log_tilted_mass(g, xi, beta)?).exp() / beta;
    let model = vmf_power_integral(xi, 1.0 + beta)? / (1.0 + beta);
    Ok(DivergenceValue::assemble(g_term, cross, model))
}

/// `d_γ(g, f_ξ)` for a mixture data density `g`.
pub fn gamma_divergence_vs_mixture(gamma: f64, xi: &NaturalParam, g: &MixtureModel) -> Result<DivergenceValue> {
    check_positive("gamma", gamma)?;
    check_same_dim(xi, g)?;
    let g_term = log_mixture_power_integral(g, 1.0 + gamma)?.map(|l| l / (gamma * (1.0 + gamma)));
    let cross = -log_tilted_mass(g, xi, gamma)? / gamma;
    let model = -special::log_vmf_norm_const(xi.dimension(), (1.0 + gamma) * xi.kappa())? / (1.0 + gamma);
    let v = DivergenceValue::assemble(g_term, cross, model);
    if !v.value.is_finite() {
        return Err(VmfError::domain("gamma divergence is not finite"));
    }
    Ok(v)
}

/// `d_KL(g, f_ξ) = ∫ g ln g - ∫ g ln f_ξ`.
pub fn kl_divergence_vs_mixture(xi: &NaturalParam, g: &MixtureModel) -> Result<DivergenceValue> {
    check_same_dim(xi, g)?;
    let mean: Vec<f64> = {
        let mut m = vec![0.0; xi.dim()];
        for (w, t) in mixture_tilted(g, xi, 0.0)? {
            for (k, v) in t.mean.iter().enumerate() {
                m[k] += w * v;
            }
        }
        m
    };
    let cross = -(log_norm_const(xi)? + crate::vmf_model::dot(xi.as_slice(), &mean));
    let g_term = if g.components().len() == 1 {
        let z = &g.components()[0].1;
        let zm = crate::moments::first_second_moments(&nalgebra::DVector::from_column_slice(z.as_slice()))?.0;
        Some(log_norm_const(z)? + crate::vmf_model::dot(z.as_slice(), zm.as_slice()))
    } else {
        sphere_quadrature(g.dim(), |x| {
            let d = g.density(x).unwrap_or(0.0);
            if d > 0.0 { d * d.ln() } else { 0.0 }
        })?
    };
    Ok(DivergenceValue::assemble(g_term, cross, 0.0))
}

/// Cross-validation loss of the fitted model at a held-out point.
///
/// This is the part of `d_λ(δ_x, f̂)` that depends on the fit, with `δ_x` the
/// point mass at `x` and `λ = loss_param`; the data-only term is dropped.
pub fn pointwise_cv_loss(kind: TuningKind, loss_param: f64, fitted: &NaturalParam, x: &UnitVector) -> Result<f64> {
    check_positive("loss parameter", loss_param)?;
    let lf = log_density(fitted, x)?;
    let loss = match kind {
        TuningKind::Beta => {
            -(loss_param * lf).exp() / loss_param + vmf_power_integral(fitted, 1.0 + loss_param)? / (1.0 + loss_param)
        }
        TuningKind::Gamma => -lf + log_vmf_power_integral(fitted, 1.0 + loss_param)? / (1.0 + loss_param),
    };
    if !loss.is_finite() {
        return Err(VmfError::domain("cross-validation loss is not finite"));
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vmf_model::Contaminant;

    fn xi2(a: f64, b: f64) -> NaturalParam {
        NaturalParam::new(vec![a, b]).unwrap()
    }

    #[test]
    fn power_integral_of_one_is_one() {
        assert_eq!(vmf_power_integral(&xi2(2.37, 0.0), 1.0).unwrap(), 1.0);
        assert!(vmf_power_integral(&xi2(2.37, 0.0), 0.5).is_err());
    }

    #[test]
    fn power_integral_matches_quadrature() {
        let xi = xi2(2.37, 0.0);
        let q = sphere_quadrature(2, |x| (1.5 * log_density(&xi, x).unwrap()).exp())
            .unwrap()
            .unwrap();
        assert!((vmf_power_integral(&xi, 1.5).unwrap() - q).abs() < 1e-9);
    }

    #[test]
    fn divergences_vanish_at_truth() {
        let xi = xi2(2.37, 0.4);
        let g = MixtureModel::pure(xi.clone());
        assert!(beta_divergence_vs_mixture(0.3, &xi, &g).unwrap().value.abs() < 1e-12);
        assert!(gamma_divergence_vs_mixture(0.3, &xi, &g).unwrap().value.abs() < 1e-12);
        assert!(kl_divergence_vs_mixture(&xi, &g).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn integer_power_closed_form_matches_quadrature() {
        let g = MixtureModel::new(0.2, xi2(2.0, 1.0), Contaminant::Vmf { eta: xi2(-3.0, 0.5) }).unwrap();
        let closed = log_mixture_power_integral(&g, 3.0).unwrap().unwrap().exp();
        let q = sphere_quadrature(2, |x| g.density(x).unwrap().powi(3)).unwrap().unwrap();
        assert!((closed - q).abs() < 1e-10 * q);
        let gu = MixtureModel::new(0.3, xi2(2.0, 1.0), Contaminant::Uniform).unwrap();
        let closed = log_mixture_power_integral(&gu, 2.0).unwrap().unwrap().exp();
        let q = sphere_quadrature(2, |x| gu.density(x).unwrap().powi(2)).unwrap().unwrap();
        assert!((closed - q).abs() < 1e-10 * q);
    }

    #[test]
    fn uniform_fit_gives_constant_beta_loss() {
        let zero = xi2(0.0, 0.0);
        let a = pointwise_cv_loss(TuningKind::Beta, 0.6, &zero, &UnitVector::from_angle(0.3)).unwrap();
        let b = pointwise_cv_loss(TuningKind::Beta, 0.6, &zero, &UnitVector::from_angle(2.9)).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn high_dimension_reports_incomplete_value() {
        let xi = NaturalParam::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let g = MixtureModel::new(0.1, xi.clone(), Contaminant::Uniform).unwrap();
        let d = beta_divergence_vs_mixture(0.5, &xi, &g).unwrap();
        assert!(!d.complete && d.g_term.is_none());
    }
}
