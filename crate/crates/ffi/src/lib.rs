//! C interface to `vmfrobust`.
//!
//! Every function returns a [`VmfStatus`]; results go through out-pointers.
//! On failure a message is kept per thread and read with
//! [`vmf_last_error`]. Panics are caught at the boundary and reported as
//! `VMF_STATUS_PANIC`.
//!
//! Vectors are passed as `p` contiguous doubles, datasets as `n × p`
//! row-major arrays, and matrices as `p × p` row-major arrays.
//!
//! # Safety
//!
//! Every pointer argument must be NULL or valid for the number of elements
//! implied by the accompanying `p` and `n`. Handles must come from the
//! matching constructor and be freed exactly once.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use vmfrobust::diagnostics::{asymptotic_cov, influence};
use vmfrobust::estimators::{fit, EstimatorConfig, EstimatorKind, FitResult, Init};
use vmfrobust::special::{self, Dimension};
use vmfrobust::vmf_model::{outlier_delta, sample, Contaminant, MixtureModel, NaturalParam, SampleModel, UnitVector};
use vmfrobust::VmfError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VmfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NonConvergence = 4,
    Diverged = 5,
    DegenerateData = 6,
    Singular = 7,
    Quadrature = 8,
    InvalidConfig = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VmfEstimator {
    Mle = 0,
    Type1 = 1,
    Type0 = 2,
}

/// Unit vectors owned by the library.
pub struct VmfDataset {
    points: Vec<UnitVector>,
}

/// Result of `vmf_fit`.
pub struct VmfFit {
    result: FitResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(VmfStatus, String);

impl From<VmfError> for Failure {
    fn from(e: VmfError) -> Self {
        let status = match &e {
            VmfError::Domain(_) => VmfStatus::InvalidArgument,
            VmfError::DimensionMismatch { .. } => VmfStatus::DimensionMismatch,
            VmfError::DegenerateData(_) => VmfStatus::DegenerateData,
            VmfError::NonConvergence { .. } => VmfStatus::NonConvergence,
            VmfError::Diverged { .. } => VmfStatus::Diverged,
            VmfError::Quadrature { .. } => VmfStatus::Quadrature,
            VmfError::Singular { .. } => VmfStatus::Singular,
            VmfError::InvalidConfig(_) => VmfStatus::InvalidConfig,
        };
        Failure(status, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn guard(f: impl FnOnce() -> Outcome) -> VmfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VmfStatus::Ok,
        Ok(Err(Failure(s, m))) => {
            set_error(m);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            VmfStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(VmfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, v: T, what: &str) -> Outcome {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

fn dim(p: usize) -> Result<Dimension, Failure> {
    Ok(Dimension::new(p)?)
}

fn kind_of(e: VmfEstimator, tuning: f64) -> EstimatorKind {
    match e {
        VmfEstimator::Mle => EstimatorKind::Mle,
        VmfEstimator::Type1 => EstimatorKind::Type1 { tuning },
        VmfEstimator::Type0 => EstimatorKind::Type0 { tuning },
    }
}

unsafe fn mixture(p: usize, xi: *const f64, epsilon: f64, eta: *const f64) -> Result<MixtureModel, Failure> {
    let xi = NaturalParam::new(read(xi, p, "xi")?.to_vec())?;
    let contaminant = if eta.is_null() {
        Contaminant::Uniform
    } else {
        Contaminant::Vmf { eta: NaturalParam::new(read(eta, p, "eta")?.to_vec())? }
    };
    Ok(MixtureModel::new(epsilon, xi, contaminant)?)
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vmf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// `A_p(x) = I_{p/2}(x) / I_{p/2-1}(x)`.
#[no_mangle]
pub unsafe extern "C" fn vmf_a_ratio(p: usize, x: f64, out: *mut f64) -> VmfStatus {
    guard(|| write_out(out, special::a_ratio(dim(p)?, x)?, "out"))
}

/// `κ` with `A_p(κ) = r`, for `r` in `[0, 1)`.
#[no_mangle]
pub unsafe extern "C" fn vmf_a_ratio_inv(p: usize, r: f64, out: *mut f64) -> VmfStatus {
    guard(|| write_out(out, special::a_ratio_inv(dim(p)?, r)?, "out"))
}

/// `ln C_p(κ)` of the vMF density `C_p(κ) exp(κ μ'x)`.
#[no_mangle]
pub unsafe extern "C" fn vmf_log_norm_const(p: usize, kappa: f64, out: *mut f64) -> VmfStatus {
    guard(|| write_out(out, special::log_vmf_norm_const(dim(p)?, kappa)?, "out"))
}

/// Copies `n × p` row-major coordinates, normalising each row.
#[no_mangle]
pub unsafe extern "C" fn vmf_dataset_new(p: usize, coords: *const f64, n: usize, out: *mut *mut VmfDataset) -> VmfStatus {
    guard(|| {
        dim(p)?;
        let raw = read(coords, n * p, "coords")?;
        let points = raw
            .chunks(p)
            .map(|r| UnitVector::normalize(r.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        write_out(out, Box::into_raw(Box::new(VmfDataset { points })), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn vmf_dataset_len(ds: *const VmfDataset, out: *mut usize) -> VmfStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        write_out(out, ds.points.len(), "out")
    })
}

/// Copies the points into `buf`, which must hold `len × p` doubles.
#[no_mangle]
pub unsafe extern "C" fn vmf_dataset_copy(ds: *const VmfDataset, buf: *mut f64, cap: usize) -> VmfStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let need: usize = ds.points.iter().map(|x| x.dim()).sum();
        if cap < need {
            return Err(Failure(VmfStatus::BufferTooSmall, format!("need {need} doubles, have {cap}")));
        }
        let dst = slice::from_raw_parts_mut(buf, need);
        for (chunk, x) in dst.chunks_mut(x_dim(ds)).zip(&ds.points) {
            chunk.copy_from_slice(x.coords());
        }
        Ok(())
    })
}

fn x_dim(ds: &VmfDataset) -> usize {
    ds.points.first().map_or(1, |x| x.dim())
}

#[no_mangle]
pub unsafe extern "C" fn vmf_dataset_free(ds: *mut VmfDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Draws `n` points from `(1 - ε) vM_p(ξ) + ε G`, where `G` is `vM_p(η)` or
/// uniform when `eta` is NULL.
#[no_mangle]
pub unsafe extern "C" fn vmf_sample(
    p: usize,
    xi: *const f64,
    epsilon: f64,
    eta: *const f64,
    n: usize,
    seed: u64,
    out: *mut *mut VmfDataset,
) -> VmfStatus {
    guard(|| {
        let m = mixture(p, xi, epsilon, eta)?;
        let points = sample(&SampleModel::Mixture(m), n, seed)?;
        write_out(out, Box::into_raw(Box::new(VmfDataset { points })), "out")
    })
}

/// Fits `estimator` to `ds`. `max_iter = 0` or `tol <= 0` select defaults.
/// On non-convergence no handle is returned.
#[no_mangle]
pub unsafe extern "C" fn vmf_fit(
    ds: *const VmfDataset,
    estimator: VmfEstimator,
    tuning: f64,
    max_iter: usize,
    tol: f64,
    out: *mut *mut VmfFit,
) -> VmfStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let d = EstimatorConfig::default();
        let cfg = EstimatorConfig {
            max_iter: if max_iter == 0 { d.max_iter } else { max_iter },
            tol: if tol > 0.0 { tol } else { d.tol },
            init: Init::Mle,
        };
        let result = fit(kind_of(estimator, tuning), &ds.points, &cfg)?;
        write_out(out, Box::into_raw(Box::new(VmfFit { result })), "out")
    })
}

/// Copies `ξ̂` into `buf` (at least `p` doubles).
#[no_mangle]
pub unsafe extern "C" fn vmf_fit_xi(f: *const VmfFit, buf: *mut f64, cap: usize) -> VmfStatus {
    guard(|| {
        let f = f.as_ref().ok_or_else(|| null("fit"))?;
        let xi = f.result.xi_hat.as_slice();
        if buf.is_null() {
            return Err(null("buf"));
        }
        if cap < xi.len() {
            return Err(Failure(VmfStatus::BufferTooSmall, format!("need {} doubles, have {cap}", xi.len())));
        }
        slice::from_raw_parts_mut(buf, xi.len()).copy_from_slice(xi);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn vmf_fit_kappa(f: *const VmfFit, out: *mut f64) -> VmfStatus {
    guard(|| {
        let f = f.as_ref().ok_or_else(|| null("fit"))?;
        write_out(out, f.result.xi_hat.kappa(), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn vmf_fit_iterations(f: *const VmfFit, out: *mut usize) -> VmfStatus {
    guard(|| {
        let f = f.as_ref().ok_or_else(|| null("fit"))?;
        write_out(out, f.result.iterations, "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn vmf_fit_free(f: *mut VmfFit) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Half-angle `δ` of the cap around `-μ` with probability `alpha`.
#[no_mangle]
pub unsafe extern "C" fn vmf_outlier_delta(p: usize, xi: *const f64, alpha: f64, out: *mut f64) -> VmfStatus {
    guard(|| {
        let xi = NaturalParam::new(read(xi, p, "xi")?.to_vec())?;
        write_out(out, outlier_delta(&xi, alpha)?.delta, "out")
    })
}

/// Influence function at `x` under the mixture `(ξ, ε, η)`; writes `p`
/// doubles to `out`.
#[no_mangle]
pub unsafe extern "C" fn vmf_influence(
    p: usize,
    estimator: VmfEstimator,
    tuning: f64,
    xi: *const f64,
    epsilon: f64,
    eta: *const f64,
    x: *const f64,
    out: *mut f64,
) -> VmfStatus {
    guard(|| {
        let g = mixture(p, xi, epsilon, eta)?;
        let x = UnitVector::normalize(read(x, p, "x")?.to_vec())?;
        let v = influence(kind_of(estimator, tuning), &g.primary, &g, &x)?;
        if out.is_null() {
            return Err(null("out"));
        }
        slice::from_raw_parts_mut(out, p).copy_from_slice(v.as_slice());
        Ok(())
    })
}

/// Sandwich covariance `V` (`p × p` row-major) and the condition number of
/// `M`, which may be NULL.
#[no_mangle]
pub unsafe extern "C" fn vmf_asymptotic_cov(
    p: usize,
    estimator: VmfEstimator,
    tuning: f64,
    xi: *const f64,
    epsilon: f64,
    eta: *const f64,
    v_out: *mut f64,
    condition_out: *mut f64,
) -> VmfStatus {
    guard(|| {
        let g = mixture(p, xi, epsilon, eta)?;
        let s = asymptotic_cov(kind_of(estimator, tuning), &g.primary, &g)?;
        if v_out.is_null() {
            return Err(null("v_out"));
        }
        let dst = slice::from_raw_parts_mut(v_out, p * p);
        for i in 0..p {
            for j in 0..p {
                dst[i * p + j] = s.v[(i, j)];
            }
        }
        if !condition_out.is_null() {
            condition_out.write(s.condition);
        }
        Ok(())
    })
}
