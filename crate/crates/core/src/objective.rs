//! The joint objective `L = theta * L_r + L_c + lambda * L_n`.
//!
//! * `L_r` is the residual sum of squares of the RUL regression,
//! * `L_c` is the Bernoulli negative log-likelihood of the failure-type
//!   logistic model,
//! * `L_n` couples the two coefficient vectors feature by feature.
//!
//! Intercepts are explicit and never penalized.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_len, MtfsError, Result};
pub use crate::params::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyMode {
    /// `sum_j a_j^2 + b_j^2`, differentiable.
    Ridge,
    /// `sum_j sqrt(a_j^2 + b_j^2)`, selects or drops each feature for both tasks.
    GroupLasso,
    /// `sum_j |a_j| + |b_j|`; the tasks decouple, one L1 problem each.
    Lasso,
}

impl PenaltyMode {
    pub fn is_smooth(self) -> bool {
        matches!(self, PenaltyMode::Ridge)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub theta: f64,
    pub lambda: f64,
    pub penalty_mode: PenaltyMode,
}

impl Hyperparams {
    pub fn new(theta: f64, lambda: f64, penalty_mode: PenaltyMode) -> Result<Self> {
        let h = Self {
            theta,
            lambda,
            penalty_mode,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(MtfsError::Validation(format!("theta must be >= 0, got {}", self.theta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(MtfsError::Validation(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        Self { lambda, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub l_r: f64,
    pub l_c: f64,
    pub l_n: f64,
    pub theta_l_r: f64,
    pub lambda_l_n: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// Blocks of the Hessian w.r.t. `(A, B)`; the cross block is identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianBlocks {
    pub p1: Array2<f64>,
    pub p2: Array2<f64>,
    pub p4: Array2<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Per-row quantities shared by the losses and the gradient.
#[derive(Debug, Clone)]
pub(crate) struct Linear {
    /// `y_r - a0 - X A`
    pub residual: Array1<f64>,
    /// `b0 + X B`
    pub eta: Array1<f64>,
}

pub(crate) fn check_dims(d: &Dataset, p: &ModelParams) -> Result<()> {
    check_len(d.n_features(), p.a.len(), "regression coefficients")?;
    check_len(d.n_features(), p.b.len(), "classification coefficients")
}

pub(crate) fn linear_parts(d: &Dataset, p: &ModelParams) -> Linear {
    let residual = &d.rul - &d.features.dot(&p.a) - p.a0;
    let eta = d.features.dot(&p.b) + p.b0;
    Linear { residual, eta }
}

fn rss(l: &Linear) -> f64 {
    l.residual.dot(&l.residual)
}

fn nll(d: &Dataset, l: &Linear) -> f64 {
    l.eta
        .iter()
        .zip(&d.failure_type)
        .map(|(&eta, &y)| {
            if y == 1 {
                softplus(-eta)
            } else {
                softplus(eta)
            }
        })
        .sum()
}

pub fn least_squares_loss(d: &Dataset, p: &ModelParams) -> Result<f64> {
    check_dims(d, p)?;
    Ok(rss(&linear_parts(d, p)))
}

/// `sum_i log(1 + exp(eta_i)) - y_i * eta_i` with `eta_i = b0 + x_i . B`.
pub fn logistic_nll(d: &Dataset, p: &ModelParams) -> Result<f64> {
    check_dims(d, p)?;
    Ok(nll(d, &linear_parts(d, p)))
}

pub fn penalty(p: &ModelParams, mode: PenaltyMode) -> f64 {
    let pairs = p.a.iter().zip(p.b.iter());
    match mode {
        PenaltyMode::Ridge => pairs.map(|(a, b)| a * a + b * b).sum(),
        PenaltyMode::GroupLasso => pairs.map(|(a, b)| a.hypot(*b)).sum(),
        PenaltyMode::Lasso => pairs.map(|(a, b)| a.abs() + b.abs()).sum(),
    }
}

pub(crate) fn breakdown_from(
    d: &Dataset,
    p: &ModelParams,
    h: &Hyperparams,
    l: &Linear,
) -> LossBreakdown {
    let l_r = rss(l);
    let l_c = nll(d, l);
    let l_n = penalty(p, h.penalty_mode);
    let theta_l_r = h.theta * l_r;
    let lambda_l_n = h.lambda * l_n;
    LossBreakdown {
        total: theta_l_r + l_c + lambda_l_n,
        l_r,
        l_c,
        l_n,
        theta_l_r,
        lambda_l_n,
    }
}

pub fn joint_objective(d: &Dataset, p: &ModelParams, h: &Hyperparams) -> Result<LossBreakdown> {
    check_dims(d, p)?;
    Ok(breakdown_from(d, p, h, &linear_parts(d, p)))
}

/// The differentiable part of the objective: `theta * L_r + L_c`, plus the
/// penalty in ridge mode.
pub(crate) fn smooth_from(d: &Dataset, p: &ModelParams, h: &Hyperparams, l: &Linear) -> f64 {
    let base = h.theta * rss(l) + nll(d, l);
    if h.penalty_mode.is_smooth() {
        base + h.lambda * penalty(p, PenaltyMode::Ridge)
    } else {
        base
    }
}

pub fn smooth_value(d: &Dataset, p: &ModelParams, h: &Hyperparams) -> Result<f64> {
    check_dims(d, p)?;
    Ok(smooth_from(d, p, h, &linear_parts(d, p)))
}

pub(crate) fn gradient_from(
    d: &Dataset,
    p: &ModelParams,
    h: &Hyperparams,
    l: &Linear,
) -> ModelParams {
    let x = &d.features;
    let scaled_resid = &l.residual * (-2.0 * h.theta);
    let cls_resid: Array1<f64> = l
        .eta
        .iter()
        .zip(&d.failure_type)
        .map(|(&eta, &y)| sigmoid(eta) - f64::from(y))
        .collect();
    let mut g = ModelParams {
        a0: scaled_resid.sum(),
        a: x.t().dot(&scaled_resid),
        b0: cls_resid.sum(),
        b: x.t().dot(&cls_resid),
    };
    if h.penalty_mode.is_smooth() {
        g.a.scaled_add(2.0 * h.lambda, &p.a);
        g.b.scaled_add(2.0 * h.lambda, &p.b);
    }
    g
}

/// Gradient of the smooth part (see [`smooth_value`]) in the same layout as
/// the parameters. Non-smooth penalties are left to the proximal step.
pub fn gradient_smooth(d: &Dataset, p: &ModelParams, h: &Hyperparams) -> Result<ModelParams> {
    check_dims(d, p)?;
    Ok(gradient_from(d, p, h, &linear_parts(d, p)))
}

/// `P1 = 2 theta X'X + 2 lambda I`, `P2 = 0`, `P4 = X' diag(pi (1 - pi)) X + 2 lambda I`.
pub fn hessian_blocks(d: &Dataset, p: &ModelParams, h: &Hyperparams) -> Result<HessianBlocks> {
    if h.penalty_mode != PenaltyMode::Ridge {
        return Err(MtfsError::UnsupportedMode(
            "Hessian blocks (ridge mode only)".into(),
        ));
    }
    check_dims(d, p)?;
    let m = d.n_features();
    let x = &d.features;
    let ridge = Array2::<f64>::eye(m) * (2.0 * h.lambda);

    let p1 = x.t().dot(x) * (2.0 * h.theta) + &ridge;

    let l = linear_parts(d, p);
    let w = l.eta.mapv(|e| {
        let pi = sigmoid(e);
        pi * (1.0 - pi)
    });
    let weighted = x * &w.insert_axis(Axis(1));
    let p4 = x.t().dot(&weighted) + &ridge;

    Ok(HessianBlocks {
        p1,
        p2: Array2::zeros((m, m)),
        p4,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn one_feature(x: Array2<f64>, rul: Array1<f64>, y: Vec<u8>) -> Dataset {
        let names = (0..x.ncols()).map(|j| format!("f{}", j + 1)).collect();
        Dataset::new(x, names, rul, y).unwrap()
    }

    #[test]
    fn least_squares_hand_values() {
        let d = one_feature(array![[1.0], [2.0]], array![0.0, 0.0], vec![0, 1]);
        assert_eq!(least_squares_loss(&d, &ModelParams::zeros(1)).unwrap(), 0.0);

        let d = one_feature(array![[1.0], [2.0]], array![1.5, 2.0], vec![0, 1]);
        let p = ModelParams {
            a0: 0.5,
            a: array![1.0],
            ..ModelParams::zeros(1)
        };
        assert!((least_squares_loss(&d, &p).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn logistic_hand_values() {
        let d = one_feature(array![[0.3]], array![1.0], vec![1]);
        let v = logistic_nll(&d, &ModelParams::zeros(1)).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);

        let p = ModelParams {
            b0: 50.0,
            ..ModelParams::zeros(1)
        };
        let v = logistic_nll(&d, &p).unwrap();
        assert!(v.abs() < 1e-15);

        for eta in [-1000.0, 1000.0, 1e4, -1e4] {
            let p = ModelParams {
                b0: eta,
                ..ModelParams::zeros(1)
            };
            assert!(logistic_nll(&d, &p).unwrap().is_finite());
            assert!(gradient_smooth(&d, &p, &Hyperparams::new(1.0, 1.0, PenaltyMode::Ridge).unwrap())
                .unwrap()
                .is_finite());
        }
    }

    #[test]
    fn penalty_hand_values() {
        let p = ModelParams {
            a: array![3.0],
            b: array![4.0],
            ..ModelParams::zeros(1)
        };
        assert_eq!(penalty(&p, PenaltyMode::Ridge), 25.0);
        assert_eq!(penalty(&p, PenaltyMode::GroupLasso), 5.0);
        assert_eq!(penalty(&p, PenaltyMode::Lasso), 7.0);
        let z = ModelParams::zeros(3);
        for mode in [PenaltyMode::Ridge, PenaltyMode::GroupLasso, PenaltyMode::Lasso] {
            assert_eq!(penalty(&z, mode), 0.0);
        }
        let p = ModelParams {
            a: array![1.0, 0.0],
            b: array![0.0, 1.0],
            ..ModelParams::zeros(2)
        };
        assert_eq!(penalty(&p, PenaltyMode::GroupLasso), 2.0);
        assert_eq!(penalty(&p, PenaltyMode::Ridge), 2.0);
    }

    #[test]
    fn intercepts_are_not_penalized() {
        let p = ModelParams {
            a0: 7.0,
            b0: -3.0,
            ..ModelParams::zeros(2)
        };
        assert_eq!(penalty(&p, PenaltyMode::Ridge), 0.0);
        assert_eq!(penalty(&p, PenaltyMode::GroupLasso), 0.0);
    }

    #[test]
    fn penalty_off_identity() {
        let d = one_feature(array![[1.0], [-2.0], [0.5]], array![1.0, 2.0, 0.0], vec![1, 0, 1]);
        let p = ModelParams {
            a0: 0.1,
            a: array![0.7],
            b0: -0.2,
            b: array![1.1],
        };
        let h = Hyperparams::new(1.0, 0.0, PenaltyMode::GroupLasso).unwrap();
        let bd = joint_objective(&d, &p, &h).unwrap();
        let want = least_squares_loss(&d, &p).unwrap() + logistic_nll(&d, &p).unwrap();
        assert!((bd.total - want).abs() < 1e-12);
        assert_eq!(bd.lambda_l_n, 0.0);
    }

    #[test]
    fn zero_data_gradient() {
        let d = one_feature(Array2::zeros((4, 2)), array![1.0, 2.0, 3.0, 6.0], vec![1, 0, 1, 1]);
        let h = Hyperparams::new(0.5, 0.0, PenaltyMode::GroupLasso).unwrap();
        let g = gradient_smooth(&d, &ModelParams::zeros(2), &h).unwrap();
        assert_eq!(g.a, array![0.0, 0.0]);
        assert_eq!(g.b, array![0.0, 0.0]);
        // -2 theta * sum(residual) = -2 * 0.5 * 12; sum(pi - y) = 4 * 0.5 - 3
        assert!((g.a0 - (-12.0)).abs() < 1e-12);
        assert!((g.b0 - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn hessian_hand_values() {
        let d = one_feature(Array2::eye(2), array![0.0, 0.0], vec![0, 1]);
        let h = Hyperparams::new(1.0, 0.0, PenaltyMode::Ridge).unwrap();
        let hb = hessian_blocks(&d, &ModelParams::zeros(2), &h).unwrap();
        assert_eq!(hb.p1, Array2::<f64>::eye(2) * 2.0);
        assert_eq!(hb.p4, Array2::<f64>::eye(2) * 0.25);
        assert_eq!(hb.p2, Array2::<f64>::zeros((2, 2)));

        let d = one_feature(Array2::zeros((3, 2)), array![0.0, 0.0, 1.0], vec![0, 1, 1]);
        let h = Hyperparams::new(1.0, 1.0, PenaltyMode::Ridge).unwrap();
        let hb = hessian_blocks(&d, &ModelParams::zeros(2), &h).unwrap();
        assert_eq!(hb.p1, Array2::<f64>::eye(2) * 2.0);
        assert_eq!(hb.p4, Array2::<f64>::eye(2) * 2.0);

        let h = Hyperparams::new(1.0, 1.0, PenaltyMode::GroupLasso).unwrap();
        assert!(matches!(
            hessian_blocks(&d, &ModelParams::zeros(2), &h),
            Err(MtfsError::UnsupportedMode(_))
        ));
    }

    #[test]
    fn dimension_mismatch() {
        let d = one_feature(array![[1.0], [2.0]], array![0.0, 0.0], vec![0, 1]);
        assert!(matches!(
            least_squares_loss(&d, &ModelParams::zeros(2)),
            Err(MtfsError::DimensionMismatch { .. })
        ));
        assert!(logistic_nll(&d, &ModelParams::zeros(3)).is_err());
        assert!(gradient_smooth(
            &d,
            &ModelParams::zeros(3),
            &Hyperparams::new(1.0, 0.0, PenaltyMode::Ridge).unwrap()
        )
        .is_err());
    }

    #[test]
    fn rejects_negative_hyperparams() {
        assert!(Hyperparams::new(-1.0, 0.0, PenaltyMode::Ridge).is_err());
        assert!(Hyperparams::new(1.0, -0.1, PenaltyMode::Ridge).is_err());
    }
}
