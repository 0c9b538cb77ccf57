//! Modified Bessel functions of the first kind, the mean-resultant-length
//! ratio `A_p`, and the vMF normalising constant.
//!
//! Everything is evaluated in exponentially scaled or logarithmic form so that
//! concentrations in the hundreds (and the `(1 + 2β)κ` arguments that the
//! divergences and covariance formulas need) never overflow.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Result, VmfError};

/// Below this argument `I_ν` is summed from its power series.
const SERIES_CUTOFF: f64 = 15.0;
/// Above this argument the Bessel ratio switches from the continued fraction
/// to the quotient of large-argument expansions (when the order is small
/// enough for those to converge quickly).
const RATIO_ASYMPTOTIC_CUTOFF: f64 = 1.0e4;
const CF_MAX_TERMS: usize = 5_000_000;

/// Ambient dimension `p` of the sphere `S_p ⊂ R^p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Dimension(usize);

impl Dimension {
    pub const CIRCLE: Dimension = Dimension(2);
    pub const SPHERE: Dimension = Dimension(3);

    pub fn new(p: usize) -> Result<Self> {
        if p < 2 {
            return Err(VmfError::domain(format!("dimension must be at least 2, got {p}")));
        }
        Ok(Dimension(p))
    }

    pub fn get(self) -> usize {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }

    /// The order `(p - 2) / 2` of the Bessel function in the normalising
    /// constant.
    pub fn nu(self) -> f64 {
        (self.0 as f64 - 2.0) / 2.0
    }
}

impl TryFrom<usize> for Dimension {
    type Error = VmfError;
    fn try_from(p: usize) -> Result<Self> {
        Dimension::new(p)
    }
}

impl From<Dimension> for usize {
    fn from(d: Dimension) -> usize {
        d.0
    }
}

fn check_order_arg(nu: f64, x: f64) -> Result<()> {
    if !nu.is_finite() || nu < -0.5 {
        return Err(VmfError::domain(format!("Bessel order must be >= -1/2, got {nu}")));
    }
    if x.is_nan() || x < 0.0 {
        return Err(VmfError::domain(format!("Bessel argument must be >= 0, got {x}")));
    }
    Ok(())
}

fn log_i_series(nu: f64, x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * (k + nu));
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
        k += 1.0;
    }
    nu * (0.5 * x).ln() - ln_gamma(nu + 1.0) + sum.ln()
}

/// `Σ_k (-1)^k a_k(ν) / x^k` of the large-argument expansion
/// `e^{-x} I_ν(x) ≈ (2πx)^{-1/2} Σ_k ...`. Summation stops at the smallest
/// term.
fn asymptotic_sum(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let mut k = 1.0;
    loop {
        let odd = 2.0 * k - 1.0;
        let next = -term * (mu - odd * odd) / (8.0 * k * x);
        if next == 0.0 || next.abs() < sum.abs() * 1e-17 {
            sum += next;
            break;
        }
        if next.abs() >= term.abs() {
            break;
        }
        sum += next;
        term = next;
        k += 1.0;
        if k > 200.0 {
            break;
        }
    }
    sum
}

/// `I_{ν+1}(x) / I_ν(x)` by the continued fraction
/// `1 / (2(ν+1)/x + 1 / (2(ν+2)/x + ...))`, evaluated with modified Lentz.
fn ratio_continued_fraction(nu: f64, x: f64) -> Result<f64> {
    const TINY: f64 = 1e-300;
    let b = |k: f64| 2.0 * (nu + k) / x;
    let mut f = b(1.0);
    if f == 0.0 {
        f = TINY;
    }
    let mut c = f;
    let mut d = 0.0;
    for k in 2..CF_MAX_TERMS {
        let bk = b(k as f64);
        d += bk;
        if d == 0.0 {
            d = TINY;
        }
        c = bk + 1.0 / c;
        if c == 0.0 {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            return Ok(1.0 / f);
        }
    }
    Err(VmfError::domain(format!(
        "Bessel ratio continued fraction did not converge (nu={nu}, x={x})"
    )))
}

/// `I_{ν+1}(x) / I_ν(x)` for `x ≥ 0`.
pub fn bessel_ratio(nu: f64, x: f64) -> Result<f64> {
    check_order_arg(nu, x)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    if x > RATIO_ASYMPTOTIC_CUTOFF && 16.0 * (nu + 1.0) * (nu + 1.0) < x {
        return Ok(asymptotic_sum(nu + 1.0, x) / asymptotic_sum(nu, x));
    }
    ratio_continued_fraction(nu, x)
}

/// `ln(e^{-x} I_ν(x))`.
pub fn log_bessel_i_scaled(nu: f64, x: f64) -> Result<f64> {
    check_order_arg(nu, x)?;
    if x == 0.0 {
        return if nu == 0.0 {
            Ok(0.0)
        } else if nu > 0.0 {
            Ok(f64::NEG_INFINITY)
        } else {
            Err(VmfError::domain("I_nu(0) is infinite for negative order"))
        };
    }
    if !x.is_finite() {
        return Err(VmfError::domain("Bessel argument must be finite"));
    }
    if x < SERIES_CUTOFF {
        return Ok(log_i_series(nu, x) - x);
    }
    // Large argument: expansion at the fractional order, then the ratio chain
    // I_{ν0+k+1}/I_{ν0+k} obtained by backward recurrence from the top.
    let steps = (nu + 0.5).floor();
    let nu0 = nu - steps;
    let mut log_i = asymptotic_sum(nu0, x).ln() - 0.5 * (2.0 * PI * x).ln();
    let steps = steps as usize;
    if steps > 0 {
        let mut r = bessel_ratio(nu - 1.0, x)?;
        let mut acc = r.ln();
        let mut order = nu - 1.0;
        for _ in 1..steps {
            // r(ν-1) = 1 / (2ν/x + r(ν))
            r = 1.0 / (2.0 * order / x + r);
            acc += r.ln();
            order -= 1.0;
        }
        log_i += acc;
    }
    Ok(log_i)
}

/// `e^{-x} I_ν(x)`.
pub fn bessel_i_scaled(nu: f64, x: f64) -> Result<f64> {
    log_bessel_i_scaled(nu, x).map(f64::exp)
}

/// `ln I_ν(x)`.
pub fn log_bessel_i(nu: f64, x: f64) -> Result<f64> {
    Ok(log_bessel_i_scaled(nu, x)? + x)
}

/// Mean resultant length `A_p(x) = I_{p/2}(x) / I_{(p-2)/2}(x)`.
pub fn a_ratio(p: Dimension, x: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(VmfError::domain(format!("A_p argument must be >= 0, got {x}")));
    }
    bessel_ratio(p.nu(), x)
}

/// `A_p'(x) = 1 - A_p(x)^2 - (p-1)/x A_p(x)`.
pub fn a_ratio_deriv(p: Dimension, x: f64) -> Result<f64> {
    if x.is_nan() || x <= 0.0 {
        return Err(VmfError::domain(format!("A_p' argument must be > 0, got {x}")));
    }
    let a = a_ratio(p, x)?;
    Ok(1.0 - a * a - (p.as_f64() - 1.0) / x * a)
}

/// Inverse of [`a_ratio`]: the concentration with mean resultant length `r`.
///
/// `r = 1` would need infinite concentration and is rejected.
pub fn a_ratio_inv(p: Dimension, r: f64) -> Result<f64> {
    if r.is_nan() || !(0.0..1.0).contains(&r) {
        return Err(VmfError::domain(format!(
            "inverse of A_p needs 0 <= r < 1, got {r}"
        )));
    }
    if r == 0.0 {
        return Ok(0.0);
    }
    let pf = p.as_f64();
    let guess = r * (pf - r * r) / (1.0 - r * r);
    let mut lo = 0.0;
    let mut hi = 2.0 * guess;
    while a_ratio(p, hi)? < r {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(VmfError::domain("inverse of A_p overflowed"));
        }
    }
    let mut x = guess.clamp(lo, hi);
    for _ in 0..300 {
        let f = a_ratio(p, x)? - r;
        if f == 0.0 {
            return Ok(x);
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = if x > 0.0 { a_ratio_deriv(p, x)? } else { 1.0 / pf };
        let mut next = x - f / d;
        if !(d > 0.0) || !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - x).abs();
        x = next;
        if step <= 4.0 * f64::EPSILON * x.max(f64::MIN_POSITIVE) || hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(x);
        }
    }
    Ok(x)
}

/// Surface area of the unit sphere in `R^p`, `2 π^{p/2} / Γ(p/2)`.
pub fn surface_area(p: usize) -> f64 {
    log_surface_area(p).exp()
}

pub fn log_surface_area(p: usize) -> f64 {
    let half = p as f64 / 2.0;
    std::f64::consts::LN_2 + half * PI.ln() - ln_gamma(half)
}

/// `ln C_p(κ)` where `C_p(κ) = κ^{(p-2)/2} / ((2π)^{p/2} I_{(p-2)/2}(κ))`
/// normalises the vMF density with respect to surface area.
pub fn log_vmf_norm_const(p: Dimension, kappa: f64) -> Result<f64> {
    if kappa.is_nan() || kappa < 0.0 {
        return Err(VmfError::domain(format!("concentration must be >= 0, got {kappa}")));
    }
    if kappa == 0.0 {
        return Ok(-log_surface_area(p.get()));
    }
    let nu = p.nu();
    let log_i = log_bessel_i(nu, kappa)?;
    let log_pow = if nu == 0.0 { 0.0 } else { nu * kappa.ln() };
    Ok(log_pow - 0.5 * p.as_f64() * (2.0 * PI).ln() - log_i)
}
