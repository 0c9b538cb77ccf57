mod common;

use common::xi;
use vmfrobust::estimators::{EstimatorConfig, EstimatorKind, RobustFamily};
use vmfrobust::simulation::{
    run_simulation, sweep_cells, table_sweep, write_long_csv, write_table_csv, Contamination, SimulationConfig,
    SimulationSpec, SweepAxis, SweepSpec, LONG_CSV_HEADER,
};
use vmfrobust::vmf_model::derive_seed;
use vmfrobust::VmfError;

fn spec(p: usize, k: f64, contamination: Contamination, n: usize, reps: usize, est: Vec<EstimatorKind>) -> SimulationSpec {
    let mut v = vec![0.0; p];
    v[0] = k;
    SimulationSpec {
        p,
        true_xi: xi(&v),
        contamination,
        n,
        replicates: reps,
        estimators: est,
        seed: 7,
        fit: EstimatorConfig::default(),
    }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn mle_alone_has_unit_ratio() {
    let s = spec(2, 2.37, Contamination::None, 50, 100, vec![]);
    let r = run_simulation(&s).unwrap();
    assert_eq!(r.estimators.len(), 1);
    assert_eq!(r.estimators[0].relative_mse, Some(1.0));
    assert_eq!(r.estimators[0].converged, 100);
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let s = spec(
        3,
        20.0,
        Contamination::Uniform { epsilon: 0.1 },
        50,
        64,
        vec![EstimatorKind::Type1 { tuning: 0.5 }, EstimatorKind::Type0 { tuning: 0.25 }],
    );
    let a = in_pool(1, || run_simulation(&s).unwrap());
    let b = in_pool(8, || run_simulation(&s).unwrap());
    assert_eq!(a, b);
    assert_eq!(a, run_simulation(&s).unwrap());
    let mut other = s.clone();
    other.seed = 8;
    assert_ne!(a, run_simulation(&other).unwrap());
}

#[test]
fn robustness_pattern_under_heavy_contamination() {
    let s = spec(
        3,
        20.0,
        Contamination::Uniform { epsilon: 0.2 },
        100,
        300,
        vec![EstimatorKind::Type1 { tuning: 0.5 }, EstimatorKind::Type1 { tuning: 0.02 }],
    );
    let r = run_simulation(&s).unwrap();
    let hi = r.get(&EstimatorKind::Type1 { tuning: 0.5 }).unwrap().relative_mse.unwrap();
    let lo = r.get(&EstimatorKind::Type1 { tuning: 0.02 }).unwrap().relative_mse.unwrap();
    assert!(hi < 0.2, "{hi}");
    assert!(lo > 0.9, "{lo}");
}

#[test]
fn clean_efficiency_pattern() {
    let est: Vec<EstimatorKind> = [0.02, 0.05, 0.1]
        .iter()
        .flat_map(|t| [EstimatorKind::Type1 { tuning: *t }, EstimatorKind::Type0 { tuning: *t }])
        .collect();
    let r = run_simulation(&spec(2, 2.37, Contamination::None, 100, 500, est)).unwrap();
    for e in &r.estimators[1..] {
        let v = e.relative_mse.unwrap();
        assert!((0.95..=1.10).contains(&v), "{}: {v}", e.label);
    }
}

#[test]
fn single_cell_sweep_matches_direct_run() {
    let base = spec(2, 2.37, Contamination::Uniform { epsilon: 0.1 }, 40, 50, vec![]);
    let sweep = SweepSpec {
        families: vec![RobustFamily::Type1],
        tunings: vec![0.3],
        columns: SweepAxis::Epsilon(vec![0.05]),
    };
    let rep = table_sweep(&base, &sweep).unwrap();
    let mut direct = base.clone();
    direct.seed = derive_seed(base.seed, 0);
    direct.contamination = Contamination::Uniform { epsilon: 0.05 };
    direct.estimators = vec![EstimatorKind::Type1 { tuning: 0.3 }];
    assert_eq!(rep.cells[0], run_simulation(&direct).unwrap());
}

#[test]
fn sweep_layout_and_csv() {
    let base = spec(2, 2.37, Contamination::None, 40, 20, vec![]);
    let sweep = SweepSpec {
        families: vec![RobustFamily::Type1, RobustFamily::Type0],
        tunings: vec![0.1, 0.5],
        columns: SweepAxis::N(vec![10, 20, 30]),
    };
    let cells = sweep_cells(&base, &sweep).unwrap();
    assert_eq!(cells.iter().map(|c| c.n).collect::<Vec<_>>(), vec![10, 20, 30]);
    assert!(cells.windows(2).all(|w| w[0].seed != w[1].seed));
    let rep = table_sweep(&base, &sweep).unwrap();
    assert_eq!(rep.rows.len(), 4);
    let mut long = Vec::new();
    write_long_csv(&rep.cells, &mut long).unwrap();
    let text = String::from_utf8(long).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), LONG_CSV_HEADER.join(","));
    assert_eq!(lines.count(), 3 * 5);
    let mut table = Vec::new();
    write_table_csv(&rep, false, &mut table).unwrap();
    let t = String::from_utf8(table).unwrap();
    assert_eq!(t.lines().count(), 1 + 4);
    let eps = SweepSpec { columns: SweepAxis::Epsilon(vec![0.1]), ..sweep };
    assert!(matches!(sweep_cells(&base, &eps), Err(VmfError::InvalidConfig(_))));
}

#[test]
fn invalid_specs() {
    let ok = spec(2, 2.37, Contamination::Uniform { epsilon: 0.1 }, 40, 5, vec![]);
    let mut s = ok.clone();
    s.replicates = 0;
    assert!(matches!(run_simulation(&s), Err(VmfError::InvalidConfig(_))));
    let mut s = ok.clone();
    s.contamination = Contamination::Uniform { epsilon: 1.5 };
    assert!(matches!(run_simulation(&s), Err(VmfError::InvalidConfig(_))));
    let mut s = ok.clone();
    s.p = 3;
    assert!(matches!(run_simulation(&s), Err(VmfError::InvalidConfig(_))));
    let mut s = ok;
    s.estimators = vec![EstimatorKind::Type0 { tuning: 0.0 }];
    assert!(matches!(run_simulation(&s), Err(VmfError::InvalidConfig(_))));
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = SimulationConfig::from_toml(&std::fs::read_to_string(&path).unwrap())
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert_eq!(cfg.simulation.replicates, 2000);
            count += 1;
        }
    }
    assert!(count >= 10);
}

#[test]
fn config_errors_name_the_field() {
    let text = "[simulation]\np = 2\ntrue_xi = [1.0, 0.0]\nn = 10\nseed = 1\nestimators = []\nbogus = 3\n\
                [simulation.contamination]\nkind = \"none\"\n";
    let err = SimulationConfig::from_toml(text).unwrap_err().to_string();
    assert!(err.contains("bogus"), "{err}");
    let text = "[simulation]\np = 2\ntrue_xi = [1.0, 0.0]\nn = 10\nseed = 1\nestimators = []\n\
                [simulation.contamination]\nkind = \"uniform\"\nepsilon = \"x\"\n";
    let err = SimulationConfig::from_toml(text).unwrap_err().to_string();
    assert!(err.contains("simulation.contamination"), "{err}");
}
