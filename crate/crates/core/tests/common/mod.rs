#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use vmfrobust::diagnostics::psi;
use vmfrobust::estimators::EstimatorKind;
use vmfrobust::quadrature::{integrate_circle, integrate_circle_vec, integrate_sphere3, integrate_sphere3_vec};
use vmfrobust::vmf_model::{Contaminant, MixtureModel, NaturalParam, UnitVector};

pub fn xi(v: &[f64]) -> NaturalParam {
    NaturalParam::new(v.to_vec()).unwrap()
}

pub fn unit(v: &[f64]) -> UnitVector {
    UnitVector::normalize(v.to_vec()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit(r: &mut ChaCha8Rng, p: usize) -> UnitVector {
    let v: Vec<f64> = (0..p).map(|_| r.sample(StandardNormal)).collect();
    UnitVector::normalize(v).unwrap()
}

pub fn random_xi(r: &mut ChaCha8Rng, p: usize, kmin: f64, kmax: f64) -> NaturalParam {
    let k = r.random_range(kmin..kmax);
    NaturalParam::from_polar(k, &random_unit(r, p)).unwrap()
}

/// A random orthogonal matrix from the QR factorisation of a Gaussian one.
pub fn random_rotation(r: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(p, p, |_, _| r.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

pub fn rotate(rot: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (rot * DVector::from_column_slice(v)).as_slice().to_vec()
}

/// `∫ h dx` over the sphere, `p ∈ {2, 3}`.
pub fn quad(p: usize, mut h: impl FnMut(&UnitVector) -> f64) -> f64 {
    match p {
        2 => integrate_circle(|x| h(&unit(x))).unwrap(),
        3 => integrate_sphere3(|x| h(&unit(x))).unwrap(),
        _ => panic!("quadrature oracle only for p = 2, 3"),
    }
}

pub fn quad_vec(p: usize, dim: usize, mut h: impl FnMut(&UnitVector, &mut [f64])) -> Vec<f64> {
    match p {
        2 => integrate_circle_vec(|x, o| h(&unit(x), o), dim).unwrap(),
        3 => integrate_sphere3_vec(|x, o| h(&unit(x), o), dim).unwrap(),
        _ => panic!("quadrature oracle only for p = 2, 3"),
    }
}

/// `∫ ψ dG` by quadrature.
pub fn psi_mean(kind: EstimatorKind, xi: &NaturalParam, g: &MixtureModel) -> DVector<f64> {
    let p = xi.dim();
    DVector::from_vec(quad_vec(p, p, |x, o| {
        let w = g.density(x).unwrap();
        let v = psi(kind, xi, x).unwrap();
        for k in 0..p {
            o[k] = w * v[k];
        }
    }))
}

/// `∫ ψψ' dG` by quadrature.
pub fn psi_outer(kind: EstimatorKind, xi: &NaturalParam, g: &MixtureModel) -> DMatrix<f64> {
    let p = xi.dim();
    let v = quad_vec(p, p * p, |x, o| {
        let w = g.density(x).unwrap();
        let s = psi(kind, xi, x).unwrap();
        for i in 0..p {
            for j in 0..p {
                o[i * p + j] = w * s[i] * s[j];
            }
        }
    });
    DMatrix::from_row_slice(p, p, &v)
}

/// `-∂(∫ ψ dG)/∂ξ'` by central differences, with the `C^γ` factor of the
/// type 0 function held fixed at `ξ`.
pub fn numerical_m(kind: EstimatorKind, xi: &NaturalParam, g: &MixtureModel, h: f64) -> DMatrix<f64> {
    let p = xi.dim();
    let scale_at = |z: &NaturalParam| match kind {
        EstimatorKind::Type0 { tuning } => (-tuning * vmfrobust::vmf_model::log_norm_const(z).unwrap()).exp(),
        _ => 1.0,
    };
    let c0 = 1.0 / scale_at(xi);
    let mut m = DMatrix::zeros(p, p);
    for j in 0..p {
        let mut up = xi.as_slice().to_vec();
        let mut dn = up.clone();
        up[j] += h;
        dn[j] -= h;
        let (u, d) = (self::xi(&up), self::xi(&dn));
        let fu = psi_mean(kind, &u, g) * scale_at(&u);
        let fd = psi_mean(kind, &d, g) * scale_at(&d);
        let col = (fu - fd) * (-c0 / (2.0 * h));
        m.set_column(j, &col);
    }
    m
}

/// Mixtures used as reference points: clean, uniform- and vMF-contaminated.
pub fn reference_mixtures(r: &mut ChaCha8Rng, p: usize, count: usize) -> Vec<(NaturalParam, MixtureModel)> {
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let xi = random_xi(r, p, 0.5, 6.0);
        let eps = r.random_range(0.0..0.3);
        let g = match i % 3 {
            0 => MixtureModel::pure(xi.clone()),
            1 => MixtureModel::new(eps, xi.clone(), Contaminant::Uniform).unwrap(),
            _ => {
                let eta = random_xi(r, p, 0.5, 8.0);
                MixtureModel::new(eps, xi.clone(), Contaminant::Vmf { eta }).unwrap()
            }
        };
        out.push((xi, g));
    }
    out
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Sea-star angles from the file named by `VMF_SEASTAR_PATH`, if set.
pub fn seastar() -> Option<Vec<UnitVector>> {
    let path = std::env::var_os("VMF_SEASTAR_PATH")?;
    let ds = vmfrobust::cli::read_dataset(std::path::Path::new(&path), vmfrobust::cli::InputFormat::AnglesCsv)
        .expect("VMF_SEASTAR_PATH must name a readable angles-csv file");
    Some(ds.points)
}
