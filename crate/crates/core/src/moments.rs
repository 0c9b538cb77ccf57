//! Exponentially tilted moments of vMF components.
//!
//! For `X ~ vM_p(ζ)` and a shift `s`, `E[e^{s'X}] = C(ζ)/C(ζ + s)` and the
//! tilted law is `vM_p(ζ + s)`, whose first two moments are known in terms
//! of `A_p`. Every mixture integral in the divergences and the sandwich
//! matrices reduces to these three quantities.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::special::{self, Dimension};
use crate::vmf_model::{MixtureModel, NaturalParam};

/// `∫ e^{s'x} f_ζ(x) dx = exp(log_mass)`, together with the mean and second
/// moment of the tilted density `vM_p(ζ + s)`.
#[derive(Debug, Clone)]
pub(crate) struct Tilted {
    pub log_mass: f64,
    pub mean: DVector<f64>,
    pub second: DMatrix<f64>,
}

/// Below this norm the tilted law is treated as uniform up to `O(r^2)`.
const SMALL_NORM: f64 = 1e-8;

pub(crate) fn first_second_moments(v: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = v.len();
    let pd = Dimension::new(p)?;
    let pf = p as f64;
    let r = v.norm();
    if r < SMALL_NORM {
        return Ok((v / pf, DMatrix::identity(p, p) / pf));
    }
    let a = special::a_ratio(pd, r)?;
    let u = v / r;
    let mean = &u * a;
    let second = DMatrix::identity(p, p) * (a / r) + (&u * u.transpose()) * (1.0 - pf * a / r);
    Ok((mean, second))
}

pub(crate) fn tilted(zeta: &NaturalParam, shift: &DVector<f64>) -> Result<Tilted> {
    let p = zeta.dimension();
    let z = DVector::from_column_slice(zeta.as_slice());
    let v = &z + shift;
    let log_mass = special::log_vmf_norm_const(p, z.norm())? - special::log_vmf_norm_const(p, v.norm())?;
    let (mean, second) = first_second_moments(&v)?;
    Ok(Tilted { log_mass, mean, second })
}

/// `(weight, tilted moments)` for every component of `g` under the shift
/// `a·ξ`.
pub(crate) fn mixture_tilted(g: &MixtureModel, xi: &NaturalParam, a: f64) -> Result<Vec<(f64, Tilted)>> {
    let shift = DVector::from_column_slice(xi.as_slice()) * a;
    g.components()
        .into_iter()
        .map(|(w, z)| Ok((w, tilted(&z, &shift)?)))
        .collect()
}

/// `ln Σ_k e^{x_k}`.
pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
