mod common;

use common::{random_dataset, rng};
use mtfs::data::{generate_synthetic, standardize, SynthSpec};
use mtfs::path::{
    default_ratio_grid, lambda_max, lambda_max_per_task, sweep, write_path_csv, PathOptions,
    SelectionCriteria,
};
use mtfs::solver::{default_init, fit, SolverConfig};
use mtfs::{Hyperparams, PenaltyMode};

fn solver() -> SolverConfig {
    SolverConfig {
        gamma: 1.0,
        trace_every: 0,
        ..SolverConfig::default()
    }
}

#[test]
fn at_and_above_lambda_max_all_groups_vanish() {
    let mut r = rng(31);
    for _ in 0..5 {
        let d = random_dataset(&mut r, 60, 6);
        let lmax = lambda_max(&d, 1.0).unwrap();
        for factor in [1.0, 1.5, 10.0] {
            let h = Hyperparams::new(1.0, factor * lmax, PenaltyMode::GroupLasso).unwrap();
            let res = fit(&d, &h, &solver(), &default_init(&d)).unwrap();
            assert!(res.params.a.iter().chain(res.params.b.iter()).all(|&v| v == 0.0));
        }
        let h = Hyperparams::new(1.0, 0.9 * lmax, PenaltyMode::GroupLasso).unwrap();
        let res = fit(&d, &h, &solver(), &default_init(&d)).unwrap();
        assert!(!res.params.active_groups().is_empty());
    }
}

#[test]
fn per_task_lambda_max_zeroes_lasso_fit() {
    let mut r = rng(32);
    let d = random_dataset(&mut r, 60, 5);
    let (lr, lc) = lambda_max_per_task(&d, 0.5).unwrap();
    let h = Hyperparams::new(0.5, lr.max(lc), PenaltyMode::Lasso).unwrap();
    let res = fit(&d, &h, &solver(), &default_init(&d)).unwrap();
    assert!(res.params.active_groups().is_empty());
    assert!(lambda_max(&d, 0.5).unwrap() <= lr.hypot(lc) + 1e-9);
}

#[test]
fn warm_path_selection_shrinks_with_lambda() {
    for seed in 0..4 {
        let spec = SynthSpec {
            n: 200,
            m: 20,
            k_shared: 5,
            seed,
            ..SynthSpec::default()
        };
        let (d, _) = generate_synthetic(&spec).unwrap();
        let d = standardize(&d).unwrap().0;
        let grid = default_ratio_grid();
        let path = sweep(&d, 0.1, &grid, &solver(), &SelectionCriteria::default(), &PathOptions::default()).unwrap();
        assert_eq!(path.len(), grid.len());
        for w in path.windows(2) {
            assert!(w[1].selected_count <= w[0].selected_count, "seed {seed}: {} -> {}", w[0].selected_count, w[1].selected_count);
            assert!(w[1].lambda >= w[0].lambda);
        }
        assert_eq!(path.last().unwrap().selected_count, 0);
        assert!(path.iter().all(|e| e.converged));
    }
}

#[test]
fn warm_and_cold_paths_reach_the_same_objective() {
    let mut r = rng(33);
    let d = random_dataset(&mut r, 80, 6);
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    let tight = SolverConfig {
        tolerance: 1e-10,
        ..solver()
    };
    let warm = sweep(&d, 1.0, &grid, &tight, &SelectionCriteria::default(), &PathOptions::default()).unwrap();
    let cold_opts = PathOptions {
        warm_start: false,
        ..PathOptions::default()
    };
    let cold = sweep(&d, 1.0, &grid, &tight, &SelectionCriteria::default(), &cold_opts).unwrap();
    for (w, c) in warm.iter().zip(&cold) {
        assert_eq!(w.ratio, c.ratio);
        let rel = (w.breakdown.total - c.breakdown.total).abs() / c.breakdown.total;
        assert!(rel < 1e-6, "ratio {}: {} vs {}", w.ratio, w.breakdown.total, c.breakdown.total);
    }
}

#[test]
fn fixed_lambda_max_scales_the_grid() {
    let mut r = rng(34);
    let d = random_dataset(&mut r, 40, 3);
    let opts = PathOptions {
        lambda_max: Some(100.0),
        ..PathOptions::default()
    };
    let path = sweep(&d, 100.0, &[0.1, 0.5], &solver(), &SelectionCriteria::default(), &opts).unwrap();
    assert_eq!(path[0].lambda, 10.0);
    assert_eq!(path[1].lambda, 50.0);
}

#[test]
fn path_csv_layout() {
    let mut r = rng(35);
    let d = random_dataset(&mut r, 40, 3);
    let path = sweep(&d, 1.0, &[0.0, 1.0], &solver(), &SelectionCriteria::default(), &PathOptions::default()).unwrap();
    let mut buf = Vec::new();
    write_path_csv(&path, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "ratio,lambda,L,L_c,lambda_Ln,theta_Lr,iterations,selected_count,selected");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("1,"));
    assert!(lines[2].ends_with(",0,"));
}

#[test]
fn invalid_grids_are_rejected() {
    let mut r = rng(36);
    let d = random_dataset(&mut r, 20, 2);
    let c = SelectionCriteria::default();
    let o = PathOptions::default();
    assert!(sweep(&d, 1.0, &[], &solver(), &c, &o).is_err());
    assert!(sweep(&d, 1.0, &[0.5, 0.2], &solver(), &c, &o).is_err());
    assert!(sweep(&d, 1.0, &[1.2], &solver(), &c, &o).is_err());
}
