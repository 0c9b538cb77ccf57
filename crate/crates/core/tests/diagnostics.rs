mod common;

use std::f64::consts::PI;

use common::{max_abs, numerical_m, psi_outer, random_rotation, random_unit, reference_mixtures, rng, rotate, unit, xi};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use vmfrobust::diagnostics::{asymptotic_cov, influence, m_matrix, psi, q_matrix};
use vmfrobust::estimators::{fit_weighted, EstimatorConfig, EstimatorKind, Init};
use vmfrobust::special::{a_ratio, Dimension};
use vmfrobust::vmf_model::{Contaminant, MixtureModel, NaturalParam, UnitVector};

fn kinds(rng: &mut rand_chacha::ChaCha8Rng) -> [EstimatorKind; 3] {
    [
        EstimatorKind::Mle,
        EstimatorKind::Type1 { tuning: rng.random_range(0.05..1.0) },
        EstimatorKind::Type0 { tuning: rng.random_range(0.05..1.0) },
    ]
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    max_abs(&(a - b)) / max_abs(b).max(1.0)
}

#[test]
fn m_and_q_match_quadrature() {
    let mut r = rng(40);
    for p in [2, 3] {
        for (z, g) in reference_mixtures(&mut r, p, 6) {
            for kind in kinds(&mut r) {
                let m = m_matrix(kind, &z, &g).unwrap();
                let q = q_matrix(kind, &z, &g).unwrap();
                let mq = numerical_m(kind, &z, &g, 1e-4);
                let qq = psi_outer(kind, &z, &g);
                assert!(rel(&m, &mq) < 1e-6, "M {kind:?} p {p}: {m} vs {mq}");
                assert!(rel(&q, &qq) < 1e-6, "Q {kind:?} p {p}: {q} vs {qq}");
            }
        }
    }
}

#[test]
fn type0_example_point() {
    let z = xi(&[2.37, 0.0]);
    let g = MixtureModel::new(0.1, z.clone(), Contaminant::Vmf { eta: xi(&[-100.0, 0.0]) }).unwrap();
    let kind = EstimatorKind::Type0 { tuning: 0.25 };
    let m = m_matrix(kind, &z, &g).unwrap();
    assert!(rel(&m, &numerical_m(kind, &z, &g, 1e-4)) < 1e-6);
}

#[test]
fn q_is_positive_semidefinite() {
    let mut r = rng(41);
    for p in [2, 3, 5] {
        for _ in 0..10 {
            let z = common::random_xi(&mut r, p, 0.2, 50.0);
            let eta = common::random_xi(&mut r, p, 0.2, 150.0);
            let g = MixtureModel::new(r.random_range(0.0..0.3), z.clone(), Contaminant::Vmf { eta }).unwrap();
            for kind in kinds(&mut r) {
                let q = q_matrix(kind, &z, &g).unwrap();
                let scale = max_abs(&q).max(1e-300);
                assert!(q.clone().symmetric_eigen().eigenvalues.min() / scale >= -1e-10);
                assert!(max_abs(&(&q - q.transpose())) == 0.0);
            }
        }
    }
}

#[test]
fn clean_limits() {
    let z = xi(&[2.37, 0.0]);
    let g = MixtureModel::pure(z.clone());
    let m0 = m_matrix(EstimatorKind::Mle, &z, &g).unwrap();
    let q0 = q_matrix(EstimatorKind::Mle, &z, &g).unwrap();
    assert!(max_abs(&(&m0 - &q0)) < 1e-12);
    let tiny = EstimatorKind::Type1 { tuning: 1e-8 };
    assert!(max_abs(&(m_matrix(tiny, &z, &g).unwrap() - &m0)) < 1e-6);
    assert!(max_abs(&(q_matrix(tiny, &z, &g).unwrap() - &m0)) < 1e-6);
    let v = asymptotic_cov(EstimatorKind::Mle, &z, &g).unwrap().v;
    let inv = m0.clone().try_inverse().unwrap();
    assert!(max_abs(&(v - inv)) < 1e-8);
    // psi at the mean direction
    let a = a_ratio(Dimension::CIRCLE, 2.37).unwrap();
    let s = psi(EstimatorKind::Mle, &z, &unit(&[1.0, 0.0])).unwrap();
    assert!((s[0] - (1.0 - a)).abs() < 1e-15 && s[1] == 0.0);
    let x = UnitVector::from_angle(0.7);
    let d = psi(tiny, &z, &x).unwrap() - psi(EstimatorKind::Mle, &z, &x).unwrap();
    assert!(d.amax() < 1e-6);
}

#[test]
fn small_beta_costs_little_efficiency() {
    let z = xi(&[2.37, 0.0]);
    let g = MixtureModel::pure(z.clone());
    let t = asymptotic_cov(EstimatorKind::Type1 { tuning: 0.02 }, &z, &g).unwrap().v.trace()
        / asymptotic_cov(EstimatorKind::Mle, &z, &g).unwrap().v.trace();
    assert!(t > 0.98 && t < 1.05, "{t}");
}

/// `(1-ε) G_n + ε δ_x` refits against `M^{-1} ψ` on the circle.
#[test]
fn influence_matches_contamination_derivative() {
    let n = 10_000;
    let z = xi(&[2.37, 0.7]);
    let g = MixtureModel::pure(z.clone());
    let atoms: Vec<UnitVector> = (0..n).map(|k| UnitVector::from_angle(2.0 * PI * k as f64 / n as f64)).collect();
    let dens: Vec<f64> = atoms.iter().map(|x| g.density(x).unwrap()).collect();
    let cfg = EstimatorConfig { tol: 1e-14, max_iter: 5000, init: Init::Explicit(z.clone()) };
    let eps = 1e-5;
    let mut r = rng(42);
    for kind in [EstimatorKind::Mle, EstimatorKind::Type1 { tuning: 0.3 }, EstimatorKind::Type0 { tuning: 0.3 }] {
        let base = fit_weighted(kind, &atoms, &dens, &cfg).unwrap().xi_hat;
        assert!((DVector::from_column_slice(base.as_slice()) - DVector::from_column_slice(z.as_slice())).amax() < 1e-10);
        for _ in 0..10 {
            let x = random_unit(&mut r, 2);
            let mut pts = atoms.clone();
            pts.push(x.clone());
            let total: f64 = dens.iter().sum();
            let mut w: Vec<f64> = dens.iter().map(|d| (1.0 - eps) * d / total).collect();
            w.push(eps);
            let moved = fit_weighted(kind, &pts, &w, &cfg).unwrap().xi_hat;
            let fd = (DVector::from_column_slice(moved.as_slice()) - DVector::from_column_slice(base.as_slice())) / eps;
            let exact = influence(kind, &z, &g, &x).unwrap();
            assert!((&fd - &exact).norm() <= 1e-2 * exact.norm(), "{kind:?}: {fd} vs {exact}");
        }
    }
}

fn norms(kind: EstimatorKind, z: &NaturalParam, grid: &[UnitVector]) -> Vec<f64> {
    let g = MixtureModel::pure(z.clone());
    grid.iter().map(|x| influence(kind, z, &g, x).unwrap().norm()).collect()
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).max_by(|a, b| v[*a].total_cmp(&v[*b])).unwrap()
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len()).min_by(|a, b| v[*a].total_cmp(&v[*b])).unwrap()
}

fn circle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

fn lattice3(m: usize) -> Vec<UnitVector> {
    let mut sphere = vec![unit(&[1.0, 0.0, 0.0]), unit(&[-1.0, 0.0, 0.0])];
    for i in 1..m {
        let th = PI * i as f64 / m as f64;
        for j in 0..m {
            let ph = 2.0 * PI * j as f64 / m as f64;
            sphere.push(unit(&[th.cos(), th.sin() * ph.cos(), th.sin() * ph.sin()]));
        }
    }
    sphere
}

#[test]
fn mle_influence_peaks_opposite_the_mean() {
    let circle: Vec<UnitVector> = (0..10_000).map(|k| UnitVector::from_angle(2.0 * PI * k as f64 / 1e4)).collect();
    let ang = |i: usize| 2.0 * PI * i as f64 / 1e4;
    let mu = 0.9;
    for kappa in [0.5, 1.0, 2.37, 5.0, 20.0] {
        let z = NaturalParam::from_polar(kappa, &UnitVector::from_angle(mu)).unwrap();
        let nr = norms(EstimatorKind::Mle, &z, &circle);
        assert!(circle_gap(ang(argmax(&nr)), mu + PI) <= PI / 1e4, "kappa {kappa}");
    }
    let sphere = lattice3(100);
    for kappa in [1.0, 3.99] {
        assert_eq!(argmax(&norms(EstimatorKind::Mle, &xi(&[kappa, 0.0, 0.0]), &sphere)), 1);
    }
}

#[test]
fn mle_influence_minimum() {
    let circle: Vec<UnitVector> = (0..10_000).map(|k| UnitVector::from_angle(2.0 * PI * k as f64 / 1e4)).collect();
    let ang = |i: usize| 2.0 * PI * i as f64 / 1e4;
    let mu = 0.9;
    // at low concentration the minimum sits at the mean direction
    let z = NaturalParam::from_polar(1.0, &UnitVector::from_angle(mu)).unwrap();
    assert!(circle_gap(ang(argmin(&norms(EstimatorKind::Mle, &z, &circle))), mu) <= PI / 1e4);
    assert_eq!(argmin(&norms(EstimatorKind::Mle, &xi(&[1.0, 0.0, 0.0]), &lattice3(100))), 0);
    // higher up it moves off the mean to where a^2 (cos t - A) = b^2 cos t,
    // a = 1/A', b = κ/A
    let kappa = 2.37;
    let a = a_ratio(Dimension::CIRCLE, kappa).unwrap();
    let ap = 1.0 - a * a - a / kappa;
    let (a2, b2) = (1.0 / (ap * ap), (kappa / a).powi(2));
    let t_star = (a2 * a / (a2 - b2)).acos();
    let z = NaturalParam::from_polar(kappa, &UnitVector::from_angle(mu)).unwrap();
    let off = circle_gap(ang(argmin(&norms(EstimatorKind::Mle, &z, &circle))), mu);
    assert!((off - t_star).abs() <= PI / 1e4, "{off} vs {t_star}");
    assert!(t_star > 0.4);
}

#[test]
fn mle_influence_spread_grows_with_concentration() {
    let circle: Vec<UnitVector> = (0..1000).map(|k| UnitVector::from_angle(2.0 * PI * k as f64 / 1e3)).collect();
    let spread: Vec<f64> = [1.0, 5.0, 20.0, 100.0]
        .iter()
        .map(|k| {
            let v = norms(EstimatorKind::Mle, &xi(&[*k, 0.0]), &circle);
            v[argmax(&v)] - v[argmin(&v)]
        })
        .collect();
    assert!(spread.windows(2).all(|w| w[0] < w[1]), "{spread:?}");
}

#[test]
fn robust_influence_is_bounded() {
    let circle: Vec<UnitVector> = (0..2000).map(|k| UnitVector::from_angle(2.0 * PI * k as f64 / 2e3)).collect();
    for t in [0.1, 0.5, 1.0] {
        for kind in [EstimatorKind::Type1 { tuning: t }, EstimatorKind::Type0 { tuning: t }] {
            let v = norms(kind, &xi(&[20.0, 0.0]), &circle);
            assert!(v.iter().all(|a| a.is_finite()));
        }
    }
}

#[test]
fn influence_is_rotation_equivariant() {
    let mut r = rng(43);
    for p in [2, 3, 4] {
        let rot = random_rotation(&mut r, p);
        let z = common::random_xi(&mut r, p, 0.5, 10.0);
        let eta = common::random_xi(&mut r, p, 0.5, 10.0);
        let x = random_unit(&mut r, p);
        let rz = xi(&rotate(&rot, z.as_slice()));
        let g = MixtureModel::new(0.1, z.clone(), Contaminant::Vmf { eta: eta.clone() }).unwrap();
        let rg = MixtureModel::new(0.1, rz.clone(), Contaminant::Vmf { eta: xi(&rotate(&rot, eta.as_slice())) }).unwrap();
        for kind in kinds(&mut r) {
            let a = rotate(&rot, influence(kind, &z, &g, &x).unwrap().as_slice());
            let b = influence(kind, &rz, &rg, &unit(&rotate(&rot, x.coords()))).unwrap();
            let scale = b.amax().max(1.0);
            assert!(a.iter().zip(b.iter()).all(|(u, v)| (u - v).abs() < 1e-9 * scale), "{kind:?}");
        }
    }
}

#[test]
fn uniform_contamination_matches_quadrature() {
    let z = xi(&[1.5, -0.5, 0.8]);
    let g = MixtureModel::new(0.2, z.clone(), Contaminant::Uniform).unwrap();
    for kind in [EstimatorKind::Type1 { tuning: 0.4 }, EstimatorKind::Type0 { tuning: 0.4 }] {
        assert!(rel(&m_matrix(kind, &z, &g).unwrap(), &numerical_m(kind, &z, &g, 1e-4)) < 1e-6);
        assert!(rel(&q_matrix(kind, &z, &g).unwrap(), &psi_outer(kind, &z, &g)) < 1e-6);
    }
}

#[test]
fn zero_concentration_is_rejected() {
    let z = xi(&[0.0, 0.0]);
    let g = MixtureModel::pure(xi(&[1.0, 0.0]));
    assert!(psi(EstimatorKind::Mle, &z, &unit(&[1.0, 0.0])).is_err());
    assert!(m_matrix(EstimatorKind::Type1 { tuning: 0.1 }, &z, &g).is_err());
}
