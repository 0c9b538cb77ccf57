//! The von Mises-Fisher family in the natural parametrisation `ξ = κμ`,
//! contamination mixtures, samplers and the outlier cap around `-μ`.

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Result, VmfError};
use crate::quadrature::{integrate_interval, QuadratureConfig};
use crate::special::{self, Dimension};

/// Points whose norm is further than this from one are rejected by
/// [`UnitVector::new`].
pub const UNIT_NORM_TOL: f64 = 1e-12;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(VmfError::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// A point on the unit sphere `S_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Wraps `coords`, which must already have unit norm.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        Dimension::new(coords.len())?;
        let n = norm(&coords);
        if !n.is_finite() || (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(VmfError::domain(format!("vector has norm {n}, expected 1")));
        }
        Ok(UnitVector(coords))
    }

    /// Scales a nonzero vector onto the sphere.
    pub fn normalize(mut coords: Vec<f64>) -> Result<Self> {
        Dimension::new(coords.len())?;
        let n = norm(&coords);
        if !(n > 0.0) || !n.is_finite() {
            return Err(VmfError::domain("cannot normalise a zero or non-finite vector"));
        }
        coords.iter_mut().for_each(|c| *c /= n);
        Ok(UnitVector(coords))
    }

    /// The point `(cos θ, sin θ)` of the circle.
    pub fn from_angle(theta: f64) -> Self {
        UnitVector(vec![theta.cos(), theta.sin()])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dimension(&self) -> Dimension {
        Dimension::new(self.0.len()).expect("unit vectors have p >= 2")
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for UnitVector {
    type Error = VmfError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        UnitVector::new(v)
    }
}

impl From<UnitVector> for Vec<f64> {
    fn from(u: UnitVector) -> Vec<f64> {
        u.0
    }
}

/// Natural parameter `ξ = κμ` of `vM_p(ξ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct NaturalParam(Vec<f64>);

impl NaturalParam {
    pub fn new(xi: Vec<f64>) -> Result<Self> {
        Dimension::new(xi.len())?;
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(VmfError::domain("natural parameter has non-finite entries"));
        }
        Ok(NaturalParam(xi))
    }

    /// `κμ` for a concentration and a unit direction.
    pub fn from_polar(kappa: f64, mu: &UnitVector) -> Result<Self> {
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(VmfError::domain(format!("concentration must be finite and >= 0, got {kappa}")));
        }
        NaturalParam::new(mu.coords().iter().map(|m| kappa * m).collect())
    }

    pub fn zeros(p: Dimension) -> Self {
        NaturalParam(vec![0.0; p.get()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dimension(&self) -> Dimension {
        Dimension::new(self.0.len()).expect("natural parameters have p >= 2")
    }

    /// `κ = ‖ξ‖`.
    pub fn kappa(&self) -> f64 {
        norm(&self.0)
    }

    /// `μ = ξ/‖ξ‖`; an error when `κ = 0`.
    pub fn mean_direction(&self) -> Result<UnitVector> {
        let k = self.kappa();
        if k == 0.0 {
            return Err(VmfError::domain("mean direction is undefined for zero concentration"));
        }
        Ok(UnitVector(self.0.iter().map(|v| v / k).collect()))
    }

    pub fn scaled(&self, a: f64) -> NaturalParam {
        NaturalParam(self.0.iter().map(|v| a * v).collect())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for NaturalParam {
    type Error = VmfError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        NaturalParam::new(v)
    }
}

impl From<NaturalParam> for Vec<f64> {
    fn from(x: NaturalParam) -> Vec<f64> {
        x.0
    }
}

/// `ln C(ξ)` of the density, with the uniform value at `ξ = 0`.
pub fn log_norm_const(xi: &NaturalParam) -> Result<f64> {
    special::log_vmf_norm_const(xi.dimension(), xi.kappa())
}

/// `ln f_ξ(x) = ln C(ξ) + ξ'x`.
pub fn log_density(xi: &NaturalParam, x: &UnitVector) -> Result<f64> {
    check_dims(xi.dim(), x.dim())?;
    Ok(log_norm_const(xi)? + dot(xi.as_slice(), x.coords()))
}

/// Second component of a two-part contamination mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Contaminant {
    /// The uniform law on the sphere.
    Uniform,
    /// `vM_p(η)`.
    Vmf { eta: NaturalParam },
}

/// `(1 - ε) vM_p(ξ) + ε · contaminant`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub epsilon: f64,
    pub primary: NaturalParam,
    pub contaminant: Contaminant,
}

impl MixtureModel {
    pub fn new(epsilon: f64, primary: NaturalParam, contaminant: Contaminant) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(VmfError::domain(format!("mixing weight must lie in [0, 1], got {epsilon}")));
        }
        if let Contaminant::Vmf { eta } = &contaminant {
            check_dims(primary.dim(), eta.dim())?;
        }
        Ok(MixtureModel { epsilon, primary, contaminant })
    }

    /// The uncontaminated model `vM_p(ξ)`.
    pub fn pure(primary: NaturalParam) -> Self {
        MixtureModel { epsilon: 0.0, primary, contaminant: Contaminant::Uniform }
    }

    pub fn dim(&self) -> usize {
        self.primary.dim()
    }

    pub fn dimension(&self) -> Dimension {
        self.primary.dimension()
    }

    /// The contaminant's natural parameter, with the uniform law as `0`.
    pub fn contaminant_param(&self) -> NaturalParam {
        match &self.contaminant {
            Contaminant::Uniform => NaturalParam::zeros(self.dimension()),
            Contaminant::Vmf { eta } => eta.clone(),
        }
    }

    /// Components with nonzero weight as `(weight, natural parameter)`.
    pub fn components(&self) -> Vec<(f64, NaturalParam)> {
        let mut out = Vec::with_capacity(2);
        if self.epsilon < 1.0 {
            out.push((1.0 - self.epsilon, self.primary.clone()));
        }
        if self.epsilon > 0.0 {
            out.push((self.epsilon, self.contaminant_param()));
        }
        out
    }

    pub fn density(&self, x: &UnitVector) -> Result<f64> {
        let mut total = 0.0;
        for (w, z) in self.components() {
            total += w * log_density(&z, x)?.exp();
        }
        Ok(total)
    }
}

/// What to draw from in [`sample`].
#[derive(Debug, Clone, PartialEq)]
pub enum SampleModel {
    Vmf(NaturalParam),
    Mixture(MixtureModel),
    Uniform(Dimension),
}

/// A ChaCha generator for stream `stream` of master seed `seed`.
///
/// Different streams of one seed are independent, which lets replicate `r`
/// of a simulation use stream `r` no matter which thread runs it.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A seed for sub-task `index` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1) << 32);
    rng.next_u64()
}

fn uniform_point<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-150 {
            return v.into_iter().map(|a| a / n).collect();
        }
    }
}

/// Best-Fisher rejection sampler for the von Mises angle about 0.
fn von_mises_angle<R: Rng + ?Sized>(kappa: f64, rng: &mut R) -> f64 {
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let u3: f64 = rng.random();
            let theta = f.clamp(-1.0, 1.0).acos();
            return if u3 < 0.5 { -theta } else { theta };
        }
    }
}

/// Wood's rejection sampler for `W = μ'X` when `p ≥ 3`.
fn wood_cosine<R: Rng + ?Sized>(p: usize, kappa: f64, rng: &mut R) -> f64 {
    let m = p as f64 - 1.0;
    let b = m / (2.0 * kappa + (4.0 * kappa * kappa + m * m).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + m * (1.0 - x0 * x0).ln();
    let beta = Beta::new(0.5 * m, 0.5 * m).expect("valid beta shape");
    loop {
        let z: f64 = beta.sample(rng);
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        let u: f64 = rng.random();
        if kappa * w + m * (1.0 - x0 * w).ln() - c >= u.ln() {
            return w;
        }
    }
}

/// Concentrations below this are sampled as uniform.
const UNIFORM_KAPPA: f64 = 1e-12;

fn vmf_point<R: Rng + ?Sized>(xi: &NaturalParam, rng: &mut R) -> Vec<f64> {
    let p = xi.dim();
    let kappa = xi.kappa();
    if kappa < UNIFORM_KAPPA {
        return uniform_point(p, rng);
    }
    let mu: Vec<f64> = xi.as_slice().iter().map(|v| v / kappa).collect();
    if p == 2 {
        let theta = von_mises_angle(kappa, rng) + mu[1].atan2(mu[0]);
        return vec![theta.cos(), theta.sin()];
    }
    let w = wood_cosine(p, kappa, rng);
    // Uniform tangent direction at μ.
    let mut v: Vec<f64>;
    loop {
        v = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let along = dot(&v, &mu);
        v.iter_mut().zip(&mu).for_each(|(a, m)| *a -= along * m);
        let n = norm(&v);
        if n > 1e-12 {
            v.iter_mut().for_each(|a| *a /= n);
            break;
        }
    }
    let s = (1.0 - w * w).max(0.0).sqrt();
    let mut x: Vec<f64> = mu.iter().zip(&v).map(|(m, t)| w * m + s * t).collect();
    let n = norm(&x);
    x.iter_mut().for_each(|a| *a /= n);
    x
}

/// Draws `n` points from `model` using `rng`.
pub fn sample_with<R: Rng + ?Sized>(model: &SampleModel, n: usize, rng: &mut R) -> Result<Vec<UnitVector>> {
    if n == 0 {
        return Err(VmfError::domain("sample size must be at least 1"));
    }
    let mut out = Vec::with_capacity(n);
    match model {
        SampleModel::Vmf(xi) => {
            for _ in 0..n {
                out.push(UnitVector(vmf_point(xi, rng)));
            }
        }
        SampleModel::Uniform(p) => {
            for _ in 0..n {
                out.push(UnitVector(uniform_point(p.get(), rng)));
            }
        }
        SampleModel::Mixture(m) => {
            let eta = m.contaminant_param();
            for _ in 0..n {
                let u: f64 = rng.random();
                let z = if u < m.epsilon { &eta } else { &m.primary };
                out.push(UnitVector(vmf_point(z, rng)));
            }
        }
    }
    Ok(out)
}

/// Draws `n` points from `model`; the same seed always gives the same points.
pub fn sample(model: &SampleModel, n: usize, seed: u64) -> Result<Vec<UnitVector>> {
    sample_with(model, n, &mut stream_rng(seed, 0))
}

/// The cap `{x : μ'x < -cos δ}` holding probability `α` under `vM_p(ξ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierRegion {
    pub delta: f64,
    pub alpha: f64,
}

/// `∫_0^δ e^{-κ(1 + cos s)} sin^{p-2} s ds`, i.e. the tail integral over
/// `t ∈ [-1, -cos δ]` scaled by `e^{-κ}` after substituting `t = -cos s`.
fn scaled_tail(p: usize, kappa: f64, delta: f64) -> Result<f64> {
    let power = (p - 2) as i32;
    let cfg = QuadratureConfig { abs_tol: 1e-300, ..QuadratureConfig::default() };
    integrate_interval(
        |s| (-kappa * (1.0 + s.cos())).exp() * s.sin().powi(power),
        0.0,
        delta,
        &cfg,
    )
}

/// Right-hand side of the cap equation, scaled by `e^{-κ}`.
fn scaled_tail_target(p: Dimension, kappa: f64, alpha: f64) -> Result<f64> {
    let nu = p.nu();
    let log_rhs = 0.5 * PI.ln() + alpha.ln() + special::log_bessel_i_scaled(nu, kappa)?
        + ln_gamma(0.5 * (p.as_f64() - 1.0))
        - nu * (0.5 * kappa).ln();
    Ok(log_rhs.exp())
}

/// Solves for the cap half-angle `δ` with tail probability `alpha`.
pub fn outlier_delta(xi: &NaturalParam, alpha: f64) -> Result<OutlierRegion> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(VmfError::domain(format!("tail probability must lie in (0, 1], got {alpha}")));
    }
    let kappa = xi.kappa();
    if kappa == 0.0 {
        return Err(VmfError::domain("outlier region needs a nonzero concentration"));
    }
    let p = xi.dimension();
    let target = scaled_tail_target(p, kappa, alpha)?;
    let full = scaled_tail(p.get(), kappa, PI)?;
    if target >= full {
        return Ok(OutlierRegion { delta: PI, alpha });
    }
    let (mut lo, mut hi) = (0.0f64, PI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if scaled_tail(p.get(), kappa, mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(OutlierRegion { delta: 0.5 * (lo + hi), alpha })
}

/// Left minus right side of the scaled cap equation at `region.delta`.
pub fn outlier_residual(xi: &NaturalParam, region: &OutlierRegion) -> Result<f64> {
    let p = xi.dimension();
    let kappa = xi.kappa();
    Ok(scaled_tail(p.get(), kappa, region.delta)? - scaled_tail_target(p, kappa, region.alpha)?)
}

/// Whether `x` falls in the cap around `-μ`.
pub fn in_outlier_region(region: &OutlierRegion, xi: &NaturalParam, x: &UnitVector) -> Result<bool> {
    check_dims(xi.dim(), x.dim())?;
    let mu = xi.mean_direction()?;
    Ok(dot(mu.coords(), x.coords()) < -region.delta.cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate_circle;

    fn xi2(a: f64, b: f64) -> NaturalParam {
        NaturalParam::new(vec![a, b]).unwrap()
    }

    #[test]
    fn uniform_log_density_on_circle() {
        let x = UnitVector::from_angle(0.7);
        let v = log_density(&xi2(0.0, 0.0), &x).unwrap();
        assert!((v + (2.0 * PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn density_is_symmetric_about_mean() {
        let xi = xi2(2.37, 0.0);
        for &t in &[0.1, 1.0, 2.5] {
            let a = log_density(&xi, &UnitVector::from_angle(t)).unwrap();
            let b = log_density(&xi, &UnitVector::from_angle(-t)).unwrap();
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let xi = xi2(2.37, 0.0);
        let total = integrate_circle(|x| log_density(&xi, &UnitVector(x.to_vec())).unwrap().exp()).unwrap();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let x = UnitVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            log_density(&xi2(1.0, 0.0), &x),
            Err(VmfError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn unit_vector_rejects_bad_norm() {
        assert!(UnitVector::new(vec![1.0, 1e-3]).is_err());
        assert!(UnitVector::normalize(vec![0.0, 0.0]).is_err());
        assert!(UnitVector::normalize(vec![3.0, 4.0]).is_ok());
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = SampleModel::Vmf(xi2(2.37, 0.0));
        assert_eq!(sample(&m, 50, 9).unwrap(), sample(&m, 50, 9).unwrap());
        assert_ne!(sample(&m, 50, 9).unwrap(), sample(&m, 50, 10).unwrap());
        assert!(sample(&m, 0, 9).is_err());
    }

    #[test]
    fn streams_differ() {
        let a = stream_rng(1, 0).next_u64();
        let b = stream_rng(1, 1).next_u64();
        assert_ne!(a, b);
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
    }

    #[test]
    fn whole_sphere_for_alpha_one() {
        let r = outlier_delta(&xi2(5.0, 0.0), 1.0).unwrap();
        assert!((r.delta - PI).abs() < 1e-6);
    }

    #[test]
    fn antipode_is_an_outlier() {
        let xi = xi2(5.0, 0.0);
        let r = outlier_delta(&xi, 0.05).unwrap();
        assert!(in_outlier_region(&r, &xi, &UnitVector::from_angle(PI)).unwrap());
        assert!(!in_outlier_region(&r, &xi, &UnitVector::from_angle(0.0)).unwrap());
        assert!(outlier_residual(&xi, &r).unwrap().abs() < 1e-8);
    }

    #[test]
    fn outlier_domain_errors() {
        assert!(outlier_delta(&xi2(0.0, 0.0), 0.05).is_err());
        assert!(outlier_delta(&xi2(1.0, 0.0), 0.0).is_err());
        assert!(outlier_delta(&xi2(1.0, 0.0), 1.5).is_err());
    }
}
