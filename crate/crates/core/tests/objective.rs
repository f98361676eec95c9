mod common;

use common::{random_dataset, random_params, rng};
use mtfs::objective::{
    gradient_smooth, hessian_blocks, joint_objective, least_squares_loss, logistic_nll, penalty,
    smooth_value, softplus,
};
use mtfs::{Hyperparams, ModelParams, PenaltyMode};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::Rng;

fn loop_losses(d: &mtfs::data::Dataset, p: &ModelParams) -> (f64, f64) {
    let (mut lr, mut lc) = (0.0, 0.0);
    for i in 0..d.n_rows() {
        let mut pred = p.a0;
        let mut eta = p.b0;
        for j in 0..d.n_features() {
            pred += d.features[[i, j]] * p.a[j];
            eta += d.features[[i, j]] * p.b[j];
        }
        lr += (d.rul[i] - pred).powi(2);
        let y = f64::from(d.failure_type[i]);
        lc += (1.0 + eta.exp()).ln() - y * eta;
    }
    (lr, lc)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

#[test]
fn losses_match_explicit_loops() {
    let mut r = rng(11);
    for _ in 0..20 {
        let n = r.random_range(5..60);
        let m = r.random_range(1..8);
        let d = random_dataset(&mut r, n, m);
        let p = random_params(&mut r, m, 0.5);
        let (lr, lc) = loop_losses(&d, &p);
        assert!(rel(least_squares_loss(&d, &p).unwrap(), lr) < 1e-12);
        assert!(rel(logistic_nll(&d, &p).unwrap(), lc) < 1e-12);

        let ridge: f64 = p.a.iter().chain(p.b.iter()).map(|v| v * v).sum();
        let group: f64 = (0..m).map(|j| p.a[j].hypot(p.b[j])).sum();
        assert!(rel(penalty(&p, PenaltyMode::Ridge), ridge) < 1e-14);
        assert!(rel(penalty(&p, PenaltyMode::GroupLasso), group) < 1e-14);

        let h = Hyperparams::new(2.5, 0.7, PenaltyMode::GroupLasso).unwrap();
        let b = joint_objective(&d, &p, &h).unwrap();
        assert!(rel(b.total, 2.5 * lr + lc + 0.7 * group) < 1e-12);
    }
}

#[test]
fn softplus_is_stable_at_extremes() {
    assert_eq!(softplus(-800.0), 0.0);
    assert_eq!(softplus(800.0), 800.0);
    assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
}

/// Central-difference gradient of the smooth part.
fn fd_gradient(d: &mtfs::data::Dataset, p: &ModelParams, h: &Hyperparams, step: f64) -> Vec<f64> {
    let m = p.n_features();
    let base = p.to_vec();
    (0..base.len())
        .map(|k| {
            let mut up = base.clone();
            let mut dn = base.clone();
            up[k] += step;
            dn[k] -= step;
            let f = |v: &[f64]| smooth_value(d, &ModelParams::from_slice(v, m).unwrap(), h).unwrap();
            (f(&up) - f(&dn)) / (2.0 * step)
        })
        .collect()
}

#[test]
fn gradient_matches_finite_differences_in_both_modes() {
    let mut r = rng(12);
    for mode in [PenaltyMode::Ridge, PenaltyMode::GroupLasso] {
        for _ in 0..10 {
            let n = r.random_range(10..80);
            let m = r.random_range(1..10);
            let d = random_dataset(&mut r, n, m);
            let p = random_params(&mut r, m, 1.0);
            let h = Hyperparams::new(r.random_range(0.0..3.0), r.random_range(0.0..5.0), mode).unwrap();
            let g = gradient_smooth(&d, &p, &h).unwrap().to_vec();
            let fd = fd_gradient(&d, &p, &h, 1e-6);
            let worst = g.iter().zip(&fd).map(|(a, b)| rel(*a, *b)).fold(0.0, f64::max);
            assert!(worst < 1e-5, "{mode:?}: relative error {worst}");
        }
    }
}

#[test]
fn hessian_blocks_match_differentiated_gradient() {
    let mut r = rng(13);
    let (n, m) = (40, 4);
    let d = random_dataset(&mut r, n, m);
    let p = random_params(&mut r, m, 0.5);
    let h = Hyperparams::new(1.5, 0.3, PenaltyMode::Ridge).unwrap();
    let blocks = hessian_blocks(&d, &p, &h).unwrap();
    let step = 1e-5;
    for j in 0..m {
        let mut up = p.clone();
        let mut dn = p.clone();
        up.a[j] += step;
        dn.a[j] -= step;
        let gu = gradient_smooth(&d, &up, &h).unwrap();
        let gd = gradient_smooth(&d, &dn, &h).unwrap();
        for i in 0..m {
            let fd = (gu.a[i] - gd.a[i]) / (2.0 * step);
            assert!(rel(blocks.p1[[i, j]], fd) < 1e-6);
            // P2 = 0: the regression gradient ignores b and vice versa.
            assert!(((gu.b[i] - gd.b[i]) / (2.0 * step)).abs() < 1e-6);
        }

        let mut up = p.clone();
        let mut dn = p.clone();
        up.b[j] += step;
        dn.b[j] -= step;
        let gu = gradient_smooth(&d, &up, &h).unwrap();
        let gd = gradient_smooth(&d, &dn, &h).unwrap();
        for i in 0..m {
            let fd = (gu.b[i] - gd.b[i]) / (2.0 * step);
            assert!(rel(blocks.p4[[i, j]], fd) < 1e-6);
        }
    }
    assert!(blocks.p2.iter().all(|&v| v == 0.0));
}

#[test]
fn hessian_blocks_rejected_for_group_penalty() {
    let mut r = rng(14);
    let d = random_dataset(&mut r, 10, 2);
    let h = Hyperparams::new(1.0, 1.0, PenaltyMode::GroupLasso).unwrap();
    assert!(hessian_blocks(&d, &ModelParams::zeros(2), &h).is_err());
}

fn min_eigenvalue(a: &ndarray::Array2<f64>) -> f64 {
    let n = a.nrows();
    let mat = DMatrix::from_fn(n, n, |i, j| a[[i, j]]);
    SymmetricEigen::new(mat).eigenvalues.min()
}

#[test]
fn ridge_hessian_blocks_are_psd() {
    let mut r = rng(15);
    for _ in 0..30 {
        let n = r.random_range(3..40);
        let m = r.random_range(1..12);
        let d = random_dataset(&mut r, n, m);
        let p = random_params(&mut r, m, 2.0);
        let h = Hyperparams::new(r.random_range(0.0..5.0), r.random_range(0.0..2.0), PenaltyMode::Ridge).unwrap();
        let blocks = hessian_blocks(&d, &p, &h).unwrap();
        assert!(min_eigenvalue(&blocks.p1) >= -1e-10);
        assert!(min_eigenvalue(&blocks.p4) >= -1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn breakdown_recomposes(seed in 0u64..10_000, theta in 0.0f64..200.0, lambda in 0.0f64..200.0, group in any::<bool>()) {
        let mut r = rng(seed);
        let d = random_dataset(&mut r, 12, 3);
        let p = random_params(&mut r, 3, 1.0);
        let mode = if group { PenaltyMode::GroupLasso } else { PenaltyMode::Ridge };
        let b = joint_objective(&d, &p, &Hyperparams::new(theta, lambda, mode).unwrap()).unwrap();
        let recomposed = b.theta_l_r + b.l_c + b.lambda_l_n;
        prop_assert!((b.total - recomposed).abs() <= 1e-10 * b.total.abs().max(1.0));
        prop_assert!(b.l_r >= 0.0 && b.l_c >= 0.0 && b.l_n >= 0.0);
    }

    #[test]
    fn objective_is_convex_along_segments(seed in 0u64..10_000, t in 0.0f64..=1.0, group in any::<bool>()) {
        let mut r = rng(seed);
        let d = random_dataset(&mut r, 15, 3);
        let x = random_params(&mut r, 3, 2.0);
        let y = random_params(&mut r, 3, 2.0);
        let mode = if group { PenaltyMode::GroupLasso } else { PenaltyMode::Ridge };
        let h = Hyperparams::new(1.0, 3.0, mode).unwrap();
        let mid = x.axpy(-(1.0 - t), &x).axpy(1.0 - t, &y);
        let f = |p: &ModelParams| joint_objective(&d, p, &h).unwrap().total;
        let rhs = t * f(&x) + (1.0 - t) * f(&y);
        prop_assert!(f(&mid) <= rhs + 1e-9 * rhs.abs().max(1.0));
    }

    #[test]
    fn group_penalty_bounded_by_lasso_and_scaled(seed in 0u64..10_000, c in 0.0f64..10.0) {
        let mut r = rng(seed);
        let p = random_params(&mut r, 5, 1.0);
        let g = penalty(&p, PenaltyMode::GroupLasso);
        prop_assert!(g <= penalty(&p, PenaltyMode::Lasso) + 1e-12);
        let scaled = ModelParams { a: &p.a * c, b: &p.b * c, ..p.clone() };
        prop_assert!((penalty(&scaled, PenaltyMode::GroupLasso) - c * g).abs() < 1e-10 * (1.0 + c * g));
    }
}
