mod common;

use common::{rng, xi};
use rand::seq::SliceRandom;
use vmfrobust::estimators::RobustFamily;
use vmfrobust::tuning::{cross_validate, cv_curve, default_grid, fold_assignment, CvSpec};
use vmfrobust::vmf_model::{sample, Contaminant, MixtureModel, SampleModel, UnitVector};
use vmfrobust::VmfError;

fn clean(n: usize, seed: u64) -> Vec<UnitVector> {
    sample(&SampleModel::Vmf(xi(&[2.37, 0.0])), n, seed).unwrap()
}

#[test]
fn default_grid_is_percent_steps() {
    let g = default_grid();
    assert_eq!(g.len(), 100);
    assert_eq!(g[0], 0.01);
    assert_eq!(g[99], 1.0);
    let s = CvSpec::default();
    assert_eq!((s.folds, s.loss_param), (3, 0.6));
}

#[test]
fn folds_cover_every_point_evenly() {
    for (n, k) in [(22, 3), (100, 3), (7, 2), (50, 10)] {
        let a = fold_assignment(n, k, 4);
        let mut sizes = vec![0usize; k];
        a.iter().for_each(|f| sizes[*f] += 1);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert_ne!(a, fold_assignment(n, k, 5));
    }
}

#[test]
fn permuting_data_with_its_folds_keeps_scores() {
    let data = clean(60, 50);
    let spec = CvSpec { grid: vec![0.05, 0.3, 0.8], seed: 2, ..CvSpec::default() };
    let a = fold_assignment(data.len(), 3, 2);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng(9));
    let pd: Vec<UnitVector> = order.iter().map(|i| data[*i].clone()).collect();
    let pa: Vec<usize> = order.iter().map(|i| a[*i]).collect();
    for est in [RobustFamily::Type1, RobustFamily::Type0] {
        let x = cv_curve(&data, est, &spec, &a).unwrap();
        let y = cv_curve(&pd, est, &spec, &pa).unwrap();
        for (u, v) in x.iter().zip(&y) {
            let (u, v) = (u.score.unwrap(), v.score.unwrap());
            assert!((u - v).abs() <= 1e-9 * u.abs().max(1.0), "{u} vs {v}");
        }
    }
}

#[test]
fn deterministic_given_seed_and_reproducible_from_assignment() {
    let data = clean(80, 51);
    let spec = CvSpec { grid: vec![0.1, 0.2, 0.4, 0.6], seed: 11, ..CvSpec::default() };
    let a = cross_validate(&data, RobustFamily::Type1, &spec).unwrap();
    let b = cross_validate(&data, RobustFamily::Type1, &spec).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.curve, cv_curve(&data, RobustFamily::Type1, &spec, &a.fold_assignment).unwrap());
    let best = a.curve.iter().filter_map(|p| p.score).fold(f64::INFINITY, f64::min);
    assert_eq!(a.best_score, best);
}

#[test]
fn score_is_mean_of_held_out_losses() {
    use vmfrobust::divergences::{pointwise_cv_loss, TuningKind};
    use vmfrobust::estimators::{fit, EstimatorConfig};
    let data = clean(30, 52);
    let spec = CvSpec { grid: vec![0.3], folds: 3, seed: 1, ..CvSpec::default() };
    let res = cross_validate(&data, RobustFamily::Type0, &spec).unwrap();
    let mut total = 0.0;
    for l in 0..3 {
        let train: Vec<UnitVector> =
            data.iter().zip(&res.fold_assignment).filter(|(_, f)| **f != l).map(|(x, _)| x.clone()).collect();
        let f = fit(RobustFamily::Type0.with_tuning(0.3), &train, &EstimatorConfig::default()).unwrap();
        for (x, _) in data.iter().zip(&res.fold_assignment).filter(|(_, f)| **f == l) {
            total += pointwise_cv_loss(TuningKind::Gamma, 0.6, &f.xi_hat, x).unwrap();
        }
    }
    assert!((res.best_score - total / 30.0).abs() < 1e-12);
}

/// On clean data every candidate estimates the same thing, so the curve is
/// nearly flat and the selection is mostly noise, leaning to small values.
#[test]
fn clean_data_curve_is_flat() {
    let mut low = 0;
    for est in [RobustFamily::Type1, RobustFamily::Type0] {
        for s in 0..6 {
            let data = clean(200, 60 + s);
            let r = cross_validate(&data, est, &CvSpec { seed: s, ..CvSpec::default() }).unwrap();
            let sc: Vec<f64> = r.curve.iter().map(|p| p.score.unwrap()).collect();
            let (lo, hi) = sc.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
            assert!((hi - lo) / lo.abs() < 0.05, "{est:?} seed {s}: {lo}..{hi}");
            if r.best <= 0.5 {
                low += 1;
            }
        }
    }
    assert!(low >= 6, "{low} of 12 selections at or below 0.5");
}

#[test]
fn contaminated_data_prefers_larger_tuning_than_clean() {
    let g = MixtureModel::new(0.15, xi(&[5.0, 0.0]), Contaminant::Vmf { eta: xi(&[-100.0, 0.0]) }).unwrap();
    let data = sample(&SampleModel::Mixture(g), 200, 70).unwrap();
    let spec = CvSpec { grid: vec![0.02, 0.1, 0.3, 0.5, 0.8], seed: 3, ..CvSpec::default() };
    let r = cross_validate(&data, RobustFamily::Type1, &spec).unwrap();
    assert!(r.best >= 0.1, "{}", r.best);
}

#[test]
fn precondition_errors() {
    let one = clean(1, 1);
    assert!(matches!(
        cross_validate(&one, RobustFamily::Type1, &CvSpec { folds: 2, ..CvSpec::default() }),
        Err(VmfError::Domain(_))
    ));
    let data = clean(20, 2);
    for spec in [
        CvSpec { grid: vec![], ..CvSpec::default() },
        CvSpec { grid: vec![0.0, 0.5], ..CvSpec::default() },
        CvSpec { grid: vec![1.5], ..CvSpec::default() },
        CvSpec { folds: 1, ..CvSpec::default() },
        CvSpec { loss_param: -0.6, ..CvSpec::default() },
    ] {
        assert!(matches!(cross_validate(&data, RobustFamily::Type0, &spec), Err(VmfError::InvalidConfig(_))));
    }
}

#[test]
fn sea_star_selection() {
    let Some(data) = common::seastar() else { return };
    let t1 = cross_validate(&data, RobustFamily::Type1, &CvSpec::default()).unwrap();
    let t0 = cross_validate(&data, RobustFamily::Type0, &CvSpec::default()).unwrap();
    assert!((t1.best - 0.59).abs() <= 0.1, "{}", t1.best);
    assert!((t0.best - 0.48).abs() <= 0.1, "{}", t0.best);
}
