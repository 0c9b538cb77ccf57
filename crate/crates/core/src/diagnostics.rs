//! Influence functions and sandwich covariances `V = M^{-1} Q M^{-T}` of the
//! three estimators under a contamination mixture `G`.
//!
//! `M` and `Q` are assembled from the tilted moments of each mixture
//! component, so they only involve `I_{(p-2)/2}` and `I_{p/2}` (through
//! `A_p` and the normalising constant).

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, VmfError};
use crate::estimators::{log_type1_shift, EstimatorKind};
use crate::moments::mixture_tilted;
use crate::special::{self, Dimension};
use crate::vmf_model::{log_norm_const, MixtureModel, NaturalParam, UnitVector};

/// Above this condition number `M` is reported as singular.
pub const MAX_CONDITION: f64 = 1e13;

/// `M`, `Q` and `V = M^{-1} Q M^{-T}`, with the condition number of `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichParts {
    pub m: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub condition: f64,
}

/// Quantities shared by every formula at a given `ξ`.
struct Base {
    p: Dimension,
    kappa: f64,
    mu: DVector<f64>,
    a: f64,
}

impl Base {
    fn new(xi: &NaturalParam) -> Result<Self> {
        let kappa = xi.kappa();
        if kappa == 0.0 {
            return Err(VmfError::domain("influence diagnostics need a nonzero concentration"));
        }
        let p = xi.dimension();
        Ok(Base {
            p,
            kappa,
            mu: DVector::from_column_slice(xi.mean_direction()?.coords()),
            a: special::a_ratio(p, kappa)?,
        })
    }

    fn pf(&self) -> f64 {
        self.p.as_f64()
    }

    fn eye(&self) -> DMatrix<f64> {
        DMatrix::identity(self.p.get(), self.p.get())
    }

    fn mumu(&self) -> DMatrix<f64> {
        &self.mu * self.mu.transpose()
    }

    /// `∂(h(κ) μ)/∂ξ' = (h/κ) I + (h' - h/κ) μμ'`.
    fn radial_jacobian(&self, h: f64, h_minus_over: f64) -> DMatrix<f64> {
        self.eye() * (h / self.kappa) + self.mumu() * h_minus_over
    }
}

fn check_dims(xi: &NaturalParam, other: usize) -> Result<()> {
    if xi.dim() != other {
        return Err(VmfError::DimensionMismatch { expected: xi.dim(), found: other });
    }
    Ok(())
}

fn tuning_of(kind: EstimatorKind) -> Result<f64> {
    let t = kind.tuning().unwrap_or(0.0);
    if !(t >= 0.0) || !t.is_finite() {
        return Err(VmfError::domain(format!("tuning value must be finite and >= 0, got {t}")));
    }
    Ok(t)
}

/// `d` and `d' - d/κ` for the type 1 correction term `d(κ) μ`.
fn type1_shift_terms(b: &Base, beta: f64) -> Result<(f64, f64)> {
    let ld = log_type1_shift(b.p, beta, b.kappa)?;
    if ld == f64::NEG_INFINITY {
        return Ok((0.0, 0.0));
    }
    let s = (1.0 + beta) * b.kappa;
    let a1 = special::a_ratio(b.p, s)?;
    let a = b.a;
    let gap = a1 - a;
    let k1 = ld.exp() / gap;
    let pk = b.pf() / b.kappa;
    let slope = k1
        * ((1.0 + beta) * a1 * gap - a * gap + beta - (1.0 + beta) * a1 * a1 - pk * a1 + a * a + pk * a);
    Ok((ld.exp(), slope))
}

/// Estimating function `ψ(x, ξ)` of `kind`.
///
/// Type 1 uses the rescaled form without the `C^β` factor; type 0 keeps
/// its `C^γ` factor.
pub fn psi(kind: EstimatorKind, xi: &NaturalParam, x: &UnitVector) -> Result<DVector<f64>> {
    check_dims(xi, x.dim())?;
    let b = Base::new(xi)?;
    let t = tuning_of(kind)?;
    let xv = DVector::from_column_slice(x.coords());
    let proj = b.kappa * xv.dot(&b.mu);
    Ok(match kind {
        EstimatorKind::Mle => &xv - &b.mu * b.a,
        EstimatorKind::Type1 { .. } => {
            let (d, _) = type1_shift_terms(&b, t)?;
            (&xv - &b.mu * b.a) * (t * proj).exp() - &b.mu * d
        }
        EstimatorKind::Type0 { .. } => {
            let a1 = special::a_ratio(b.p, (1.0 + t) * b.kappa)?;
            (&xv - &b.mu * a1) * (t * log_norm_const(xi)? + t * proj).exp()
        }
    })
}

/// `M = -∫ ∂ψ/∂ξ' dG`.
///
/// For type 0 the derivative of the `C^γ` factor is left out: it multiplies
/// `∫ ψ dG`, which vanishes wherever the influence function is evaluated.
pub fn m_matrix(kind: EstimatorKind, xi: &NaturalParam, g: &MixtureModel) -> Result<DMatrix<f64>> {
    check_dims(xi, g.dim())?;
    let b = Base::new(xi)?;
    let t = tuning_of(kind)?;
    let pk = b.pf() / b.kappa;
    let a = b.a;
    match kind {
        EstimatorKind::Mle => Ok(b.radial_jacobian(a, 1.0 - a * a - pk * a)),
        EstimatorKind::Type1 { .. } => {
            // -∫ e^{βξ'x} [β(x - Aμ)x' - ∂(Aμ)/∂ξ'] dG + ∂(dμ)/∂ξ'
            let jac_a = b.radial_jacobian(a, 1.0 - a * a - pk * a);
            let mut m = DMatrix::zeros(b.p.get(), b.p.get());
            for (w, tl) in mixture_tilted(g, xi, t)? {
                let mass = w * tl.log_mass.exp();
                let inner = (&tl.second - &b.mu * tl.mean.transpose() * a) * t - &jac_a;
                m -= inner * mass;
            }
            let (d, slope) = type1_shift_terms(&b, t)?;
            m += b.radial_jacobian(d, slope);
            Ok(m)
        }
        EstimatorKind::Type0 { .. } => {
            let s = (1.0 + t) * b.kappa;
            let a1 = special::a_ratio(b.p, s)?;
            let jac = b.radial_jacobian(a1, (1.0 + t) * (1.0 - a1 * a1) - pk * a1);
            let lc = t * log_norm_const(xi)?;
            let mut m = DMatrix::zeros(b.p.get(), b.p.get());
            for (w, tl) in mixture_tilted(g, xi, t)? {
                let mass = w * (lc + tl.log_mass).exp();
                let inner = (&tl.second - &b.mu * tl.mean.transpose() * a1) * t - &jac;
                m -= inner * mass;
            }
            Ok(m)
        }
    }
}

/// `E[(x - cμ)(x - cμ)']` under a tilted component with the given moments.
fn centred_second(second: &DMatrix<f64>, mean: &DVector<f64>, mu: &DVector<f64>, c: f64) -> DMatrix<f64> {
    second - (mu * mean.transpose() + mean * mu.transpose()) * c + mu * mu.transpose() * (c * c)
}

/// `Q = ∫ ψ ψ' dG`.
pub fn q_matrix(kind: EstimatorKind, xi: &NaturalParam, g: &MixtureModel) -> Result<DMatrix<f64>> {
    check_dims(xi, g.dim())?;
    let b = Base::new(xi)?;
    let t = tuning_of(kind)?;
    let n = b.p.get();
    let mut q = DMatrix::zeros(n, n);
    match kind {
        EstimatorKind::Mle => {
            for (w, tl) in mixture_tilted(g, xi, 0.0)? {
                q += centred_second(&tl.second, &tl.mean, &b.mu, b.a) * w;
            }
        }
        EstimatorKind::Type1 { .. } => {
            let (d, _) = type1_shift_terms(&b, t)?;
            for (w, tl) in mixture_tilted(g, xi, 2.0 * t)? {
                q += centred_second(&tl.second, &tl.mean, &b.mu, b.a) * (w * tl.log_mass.exp());
            }
            for (w, tl) in mixture_tilted(g, xi, t)? {
                let c = &tl.mean - &b.mu * b.a;
                q -= (&c * b.mu.transpose() + &b.mu * c.transpose()) * (d * w * tl.log_mass.exp());
            }
            q += b.mumu() * (d * d);
        }
        EstimatorKind::Type0 { .. } => {
            let a1 = special::a_ratio(b.p, (1.0 + t) * b.kappa)?;
            let lc = 2.0 * t * log_norm_const(xi)?;
            for (w, tl) in mixture_tilted(g, xi, 2.0 * t)? {
                q += centred_second(&tl.second, &tl.mean, &b.mu, a1) * (w * (lc + tl.log_mass).exp());
            }
        }
    }
    // Symmetrise away rounding.
    Ok((&q + q.transpose()) * 0.5)
}

/// Solves `M y = r` via the SVD, refusing when `M` is numerically singular.
fn solve_checked(m: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let svd = m.clone().svd(true, true);
    let cond = condition_number(&svd.singular_values);
    if !(cond <= MAX_CONDITION) {
        return Err(VmfError::Singular { condition: cond });
    }
    let sol = svd
        .solve(r, 0.0)
        .map_err(|_| VmfError::Singular { condition: cond })?;
    Ok((sol, cond))
}

fn condition_number(sv: &DVector<f64>) -> f64 {
    let max = sv.iter().cloned().fold(0.0f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `IF(x; G) = M^{-1} ψ(x, ξ)`.
pub fn influence(kind: EstimatorKind, xi: &NaturalParam, g: &MixtureModel, x: &UnitVector) -> Result<DVector<f64>> {
    let m = m_matrix(kind, xi, g)?;
    let r = psi(kind, xi, x)?;
    let (sol, _) = solve_checked(&m, &DMatrix::from_column_slice(r.len(), 1, r.as_slice()))?;
    Ok(sol.column(0).into_owned())
}

/// Asymptotic covariance of `n^{1/2}(ξ̂ - ξ)` under `G`.
pub fn asymptotic_cov(kind: EstimatorKind, xi: &NaturalParam, g: &MixtureModel) -> Result<SandwichParts> {
    let m = m_matrix(kind, xi, g)?;
    let q = q_matrix(kind, xi, g)?;
    let (mq, condition) = solve_checked(&m, &q)?;
    let (v_t, _) = solve_checked(&m, &mq.transpose())?;
    let v = (&v_t + v_t.transpose()) * 0.5;
    Ok(SandwichParts { m, q, v, condition })
}
