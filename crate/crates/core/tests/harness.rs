//! Counting, aggregation, persistence and seeding contracts of the sweep
//! harness, exercised on small grids.

use std::collections::HashSet;

use gridfill_core::harness::{
    aggregate, child_seed, config_hash, mean_std, nmse, plot_rows, read_results_csv, run_sweep, scenario,
    write_results_csv, write_sweep, ExperimentConfig, Method, SmrLevel,
};
use gridfill_core::StateMatrix;
use nalgebra::DMatrix;

const GAMMAS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

fn small(methods: Vec<Method>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(12, 12, GAMMAS.to_vec(), methods);
    cfg.svt.max_iterations = 40;
    cfg.bsvt.max_iterations = 40;
    cfg
}

#[test]
fn nmse_examples() {
    let m = StateMatrix::new(DMatrix::from_fn(3, 4, |i, j| (i + 2 * j) as f64 + 1.0)).unwrap();
    assert_eq!(nmse(&m, &m).unwrap(), 0.0);
    let zero = StateMatrix::new(DMatrix::zeros(3, 4)).unwrap();
    assert_eq!(nmse(&m, &zero).unwrap(), 1.0);
    let double = StateMatrix::new(m.values() * 2.0).unwrap();
    assert!((nmse(&m, &double).unwrap() - 1.0).abs() < 1e-15);
    assert!(nmse(&zero, &m).is_err());
}

#[test]
fn counting_contract() {
    let cfg = small(vec![Method::Svt, Method::Bsvt]);
    assert_eq!(cfg.repeats, 20);
    let out = run_sweep(&cfg, None).unwrap();
    assert_eq!(out.results.len(), 360);
    assert_eq!(out.aggregates.len(), 18);
}

#[test]
fn aggregates_match_their_rows_and_rows_round_trip() {
    let mut cfg = small(vec![Method::Lmmse, Method::Svt, Method::Bsvt]);
    cfg.repeats = 4;
    cfg.smr = vec![SmrLevel::Exact, SmrLevel::Ratio(10.0)];
    let out = run_sweep(&cfg, None).unwrap();
    for a in &out.aggregates {
        let values: Vec<f64> = out
            .results
            .iter()
            .filter(|r| r.gamma == a.gamma && r.method == a.method && r.smr == a.smr && !r.failed())
            .map(|r| r.nmse)
            .collect();
        let (mean, std) = mean_std(&values);
        assert_eq!(a.runs, 4);
        assert!((a.mean_nmse - mean).abs() <= 1e-15 * mean.abs());
        assert!((a.std_nmse - std).abs() <= 1e-12 * std.abs().max(1e-300));
    }
    assert_eq!(aggregate(&out.results), out.aggregates);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    write_results_csv(&path, &out.results).unwrap();
    let back = read_results_csv(&path).unwrap();
    assert_eq!(back.len(), out.results.len());
    assert!(back.iter().zip(&out.results).all(|(a, b)| a.same_as(b)));
}

#[test]
fn rows_are_in_canonical_order() {
    let mut cfg = small(vec![Method::Bsvt, Method::Lmmse]);
    cfg.repeats = 3;
    cfg.smr = vec![SmrLevel::Ratio(10.0), SmrLevel::Exact];
    let out = run_sweep(&cfg, Some(2)).unwrap();
    let keys: Vec<(u64, usize, usize, usize)> = out
        .results
        .iter()
        .map(|r| {
            let m = cfg.methods.iter().position(|&x| x == r.method).unwrap();
            let s = cfg.smr.iter().position(|x| x.label() == r.smr).unwrap();
            (r.gamma.to_bits(), m, s, r.repeat)
        })
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
}

#[test]
fn full_grid_plot_has_seven_series() {
    let mut cfg = small(vec![Method::Svt, Method::Lmmse, Method::Bsvt]);
    cfg.repeats = 2;
    cfg.smr = vec![SmrLevel::Exact, SmrLevel::Ratio(100.0), SmrLevel::Ratio(10.0)];
    let out = run_sweep(&cfg, None).unwrap();
    let rows = plot_rows(&out.aggregates, &[]).unwrap();
    let series: HashSet<String> = rows.iter().map(|r| r.1.clone()).collect();
    assert_eq!(series.len(), 7, "{series:?}");
    assert_eq!(rows.len(), 7 * GAMMAS.len());

    let single = small(vec![Method::Svt]);
    let out = run_sweep(&ExperimentConfig { repeats: 1, ..single }, None).unwrap();
    let rows = plot_rows(&out.aggregates, &[]).unwrap();
    assert_eq!(rows.iter().map(|r| r.1.as_str()).collect::<HashSet<_>>().len(), 1);
}

#[test]
fn sweep_files_and_stable_plot_name() {
    let mut cfg = small(vec![Method::Lmmse]);
    cfg.repeats = 2;
    cfg.opta = true;
    let out = run_sweep(&cfg, None).unwrap();
    assert_eq!(out.opta.len(), GAMMAS.len());
    let dir = tempfile::tempdir().unwrap();
    let files = write_sweep(dir.path(), &cfg, &out).unwrap();
    let hash = config_hash(&cfg).unwrap();
    assert_eq!(files.plot.file_name().unwrap().to_str().unwrap(), format!("plot-{hash}.csv"));
    let moved = ExperimentConfig {
        output: "elsewhere".into(),
        ..cfg.clone()
    };
    assert_eq!(config_hash(&moved).unwrap(), hash);
    let reseeded = ExperimentConfig { base_seed: 1, ..cfg };
    assert_ne!(config_hash(&reseeded).unwrap(), hash);
    assert!(files.opta.unwrap().is_file());
    let plot = std::fs::read_to_string(files.plot).unwrap();
    assert!(plot.starts_with("gamma,series,mean_nmse,std\n"));
    assert!(plot.contains(",opta,"));
}

#[test]
fn child_seeds_do_not_collide() {
    for base in [0u64, 1, 42, u64::MAX] {
        let seeds: HashSet<u64> = (0..64).flat_map(|g| (0..500).map(move |r| child_seed(base, g, r))).collect();
        assert_eq!(seeds.len(), 64 * 500);
    }
}

#[test]
fn cells_are_shared_by_every_method() {
    let cfg = small(vec![Method::Svt]);
    let law = cfg.source().unwrap();
    let a = scenario(&cfg, &law, 3, 7).unwrap();
    let b = scenario(&small(vec![Method::Lmmse, Method::Bsvt]), &law, 3, 7).unwrap();
    assert_eq!(a.observations.checksum(), b.observations.checksum());
    assert_eq!(a.truth, b.truth);
    let other = scenario(&cfg, &law, 3, 8).unwrap();
    assert_ne!(a.observations.checksum(), other.observations.checksum());
}

#[test]
fn degenerate_sources_do_not_abort_the_sweep() {
    // zero covariance, hence zero noise and singular observed blocks
    let dir = tempfile::tempdir().unwrap();
    let cov = dir.path().join("cov.csv");
    gridfill_core::io::write_matrix_csv(&cov, &DMatrix::zeros(6, 6)).unwrap();
    let mut cfg = ExperimentConfig::new(6, 6, vec![0.5], vec![Method::Lmmse, Method::Svt]);
    cfg.covariance_file = Some(cov);
    cfg.repeats = 2;
    let out = run_sweep(&cfg, None).unwrap();
    assert_eq!(out.results.len(), 4);
    assert!(out.results.iter().all(|r| r.nmse.is_finite() || r.failed()));
}
