//! Adaptive Gauss–Kronrod quadrature on intervals, the circle and the
//! two-sphere.
//!
//! The integrators are vector-valued so that a whole matrix integrand can be
//! refined in a single pass; the scalar entry points are thin wrappers.

#![allow(clippy::excessive_precision)]

use std::f64::consts::PI;

use crate::error::{Result, VmfError};

// 21-point Kronrod extension of the 10-point Gauss rule (QUADPACK qk21).
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_600_525_519_795,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

// Gauss weights for the odd-indexed Kronrod nodes XGK[1], XGK[3], ...
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

/// Tolerances and work limit for the adaptive integrators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Equal-width panels the domain is cut into before adaptation starts, so
    /// that narrow peaks cannot slip between the nodes of a single rule.
    pub initial_panels: usize,
    /// Upper bound on the number of subintervals; exceeding it is an error.
    pub max_intervals: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            abs_tol: 1e-13,
            rel_tol: 1e-12,
            initial_panels: 16,
            max_intervals: 20_000,
        }
    }
}

impl QuadratureConfig {
    /// A cheaper setting used for inner integrals of nested rules.
    pub fn inner() -> Self {
        QuadratureConfig {
            initial_panels: 8,
            ..Self::default()
        }
    }
}

struct Panel {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: f64,
}

fn kronrod_panel<F>(f: &mut F, dim: usize, a: f64, b: f64, buf: &mut [f64]) -> Panel
where
    F: FnMut(f64, &mut [f64]),
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kron = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];

    f(center, buf);
    for k in 0..dim {
        kron[k] = WGK[10] * buf[k];
    }
    for (i, (&x, &wk)) in XGK.iter().zip(WGK.iter()).take(10).enumerate() {
        let dx = half * x;
        for s in [-1.0, 1.0] {
            f(center + s * dx, buf);
            for k in 0..dim {
                kron[k] += wk * buf[k];
                if i % 2 == 1 {
                    gauss[k] += WG[i / 2] * buf[k];
                }
            }
        }
    }
    let mut error = 0.0f64;
    for k in 0..dim {
        kron[k] *= half;
        gauss[k] *= half;
        error = error.max((kron[k] - gauss[k]).abs());
    }
    Panel {
        a,
        b,
        value: kron,
        error,
    }
}

/// Integrates the `dim`-valued function `f` over `[a, b]`.
///
/// `f(x, out)` writes the integrand at `x` into `out`. Refinement bisects the
/// panel with the largest error estimate until the summed estimate is below
/// `max(abs_tol, rel_tol * max_k |I_k|)`.
pub fn integrate_interval_vec<F>(
    mut f: F,
    dim: usize,
    a: f64,
    b: f64,
    cfg: &QuadratureConfig,
) -> Result<Vec<f64>>
where
    F: FnMut(f64, &mut [f64]),
{
    if a == b {
        return Ok(vec![0.0; dim]);
    }
    let mut buf = vec![0.0; dim];
    let n0 = cfg.initial_panels.max(1);
    let width = (b - a) / n0 as f64;
    let mut panels: Vec<Panel> = (0..n0)
        .map(|i| {
            let lo = a + width * i as f64;
            let hi = if i + 1 == n0 { b } else { lo + width };
            kronrod_panel(&mut f, dim, lo, hi, &mut buf)
        })
        .collect();

    loop {
        let mut total = vec![0.0; dim];
        let mut err = 0.0;
        for p in &panels {
            for (t, v) in total.iter_mut().zip(&p.value) {
                *t += v;
            }
            err += p.error;
        }
        let scale = total.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = cfg.abs_tol.max(cfg.rel_tol * scale);
        if err <= tol {
            return Ok(total);
        }
        if panels.len() >= cfg.max_intervals {
            return Err(VmfError::Quadrature {
                estimated_error: err,
                intervals: panels.len(),
            });
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, p)| if p.error > acc.1 { (i, p.error) } else { acc });
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b {
            // Panel cannot be split further in floating point.
            return Err(VmfError::Quadrature {
                estimated_error: err,
                intervals: panels.len() + 1,
            });
        }
        panels.push(kronrod_panel(&mut f, dim, p.a, mid, &mut buf));
        panels.push(kronrod_panel(&mut f, dim, mid, p.b, &mut buf));
    }
}

/// Scalar integral over `[a, b]`.
pub fn integrate_interval<F>(mut f: F, a: f64, b: f64, cfg: &QuadratureConfig) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    integrate_interval_vec(|x, out| out[0] = f(x), 1, a, b, cfg).map(|v| v[0])
}

/// Integral over the unit circle with respect to arc length; `f` receives the
/// point `(cos t, sin t)`.
pub fn integrate_circle<F>(mut f: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    integrate_circle_vec(|x, out| out[0] = f(x), 1).map(|v| v[0])
}

pub fn integrate_circle_vec<F>(mut f: F, dim: usize) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let cfg = QuadratureConfig::default();
    let mut x = [0.0; 2];
    integrate_interval_vec(
        |t, out| {
            x[0] = t.cos();
            x[1] = t.sin();
            f(&x, out)
        },
        dim,
        -PI,
        PI,
        &cfg,
    )
}

/// Integral over the unit sphere in R^3 with respect to surface area.
///
/// Uses colatitude `θ` from the first axis and longitude `φ` about it, so a
/// point is `(cos θ, sin θ cos φ, sin θ sin φ)`. Integrands that are
/// rotationally symmetric about the first axis should use
/// [`integrate_zonal`] instead.
pub fn integrate_sphere3<F>(mut f: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    integrate_sphere3_vec(|x, out| out[0] = f(x), 1).map(|v| v[0])
}

pub fn integrate_sphere3_vec<F>(mut f: F, dim: usize) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let outer = QuadratureConfig::default();
    let inner = QuadratureConfig::inner();
    let mut failure: Option<VmfError> = None;
    let mut x = [0.0; 3];
    let result = integrate_interval_vec(
        |theta, out| {
            let (st, ct) = theta.sin_cos();
            let ring = integrate_interval_vec(
                |phi, o| {
                    let (sp, cp) = phi.sin_cos();
                    x[0] = ct;
                    x[1] = st * cp;
                    x[2] = st * sp;
                    f(&x, o)
                },
                dim,
                -PI,
                PI,
                &inner,
            );
            match ring {
                Ok(v) => {
                    for k in 0..dim {
                        out[k] = v[k] * st;
                    }
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    out.iter_mut().for_each(|o| *o = 0.0);
                }
            }
        },
        dim,
        0.0,
        PI,
        &outer,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(result),
    }
}

/// Integral over `S_p` of a function of `t = μ'x` only:
/// `ω_{p-1} ∫_0^π g(cos θ) sin^{p-2} θ dθ`, where `ω_{p-1}` is the area of the
/// unit sphere in `R^{p-1}`.
pub fn integrate_zonal<F>(p: usize, mut g: F) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    if p < 2 {
        return Err(VmfError::domain(format!("dimension must be at least 2, got {p}")));
    }
    let cfg = QuadratureConfig::default();
    let power = (p - 2) as i32;
    let integral = integrate_interval(|th| g(th.cos()) * th.sin().powi(power), 0.0, PI, &cfg)?;
    Ok(integral * crate::special::surface_area(p - 1))
}
