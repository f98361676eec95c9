//! Linear SVM (hinge loss) for the failure type and linear
//! epsilon-insensitive SVR for RUL, both trained in the primal by
//! deterministic descent with Armijo backtracking and the same
//! relative-change stopping rule as the joint solver.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_len, MtfsError, Result};
use crate::solver::{armijo_search, relative_change, LineSearch, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStop {
    Tolerance,
    MaxIters,
    /// No step along the search directions decreased the objective.
    NoDescent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: TrainStop,
    pub objective: f64,
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}

/// Statistics needed to score raw (unstandardized) rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardization {
    fn from_dataset(d: &Dataset) -> Option<Self> {
        d.standardized.then(|| Standardization {
            means: d.column_means.clone(),
            stds: d.column_stds.clone(),
        })
    }

    fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c_reg: f64,
    pub standardization: Option<Standardization>,
    pub training: TrainingSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Width of the insensitive tube, in target units (days).
    pub epsilon: f64,
    pub c_reg: f64,
    pub standardization: Option<Standardization>,
    pub training: TrainingSummary,
}

/// Solver settings suited to the predictors: large initial step, bounded
/// iteration budget, no per-iteration trace storage beyond objectives.
pub fn predictor_solver_config() -> SolverConfig {
    SolverConfig {
        gamma: 1.0,
        line_search: LineSearch::backtracking(),
        tolerance: 1e-6,
        max_iters: 5_000,
        denom_floor: 1e-8,
        trace_every: 1,
    }
}

/// Huber-type smoothing of `max(0, u)` with width `mu`: quadratic on
/// `(0, mu)`, linear beyond. `mu = 0` is the exact function. Returns the
/// value, the derivative (a subgradient when `mu = 0`) and the curvature.
fn smooth_plus(u: f64, mu: f64) -> (f64, f64, f64) {
    if u <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if u < mu {
        (u * u / (2.0 * mu), u / mu, 1.0 / mu)
    } else {
        (u - mu / 2.0, 1.0, 0.0)
    }
}

/// Smoothing widths, in units of the loss argument.
const SMOOTHING: [f64; 9] = [1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8];

/// Summed loss with its first and second derivatives in each `f_i`.
type LossEval = (f64, Array1<f64>, Array1<f64>);

/// Damped Newton direction `-(H + delta I)^-1 g` for the smoothed objective,
/// or `None` when the system cannot be factored.
fn newton_direction(
    x: &ArrayView2<f64>,
    c_reg: f64,
    curvature: &Array1<f64>,
    g: &Array1<f64>,
) -> Option<Array1<f64>> {
    let (n, m) = x.dim();
    let mut h = DMatrix::<f64>::zeros(m + 1, m + 1);
    for i in 0..n {
        let k = c_reg * curvature[i];
        if k == 0.0 {
            continue;
        }
        let row = x.row(i);
        for a in 0..=m {
            let xa = if a < m { row[a] } else { 1.0 };
            for b in a..=m {
                let xb = if b < m { row[b] } else { 1.0 };
                h[(a, b)] += k * xa * xb;
            }
        }
    }
    for a in 0..=m {
        for b in 0..a {
            h[(a, b)] = h[(b, a)];
        }
    }
    let scale = (0..=m).map(|a| h[(a, a)]).fold(1.0, f64::max);
    for a in 0..=m {
        h[(a, a)] += if a < m { 1.0 } else { 0.0 } + 1e-10 * scale;
    }
    let rhs = DVector::from_iterator(m + 1, g.iter().map(|v| -v));
    let d = h.cholesky()?.solve(&rhs);
    d.iter().all(|v| v.is_finite()).then(|| d.iter().copied().collect())
}

/// Minimizes `1/2 ||w||^2 + C * sum_i loss_i(f_i)` over `v = [w..., b]`,
/// `f = X w + b`. `loss(f, mu)` returns the summed loss and its first and
/// second derivatives with respect to each `f_i` for smoothing width `mu`
/// (`mu = 0` is exact).
///
/// Directions are damped Newton steps on the smoothed objective, with the
/// smoothed gradient as fallback; the sufficient-decrease test is applied to
/// the exact objective, so the objective trace never increases. When neither
/// direction decreases the exact objective, or the relative change falls
/// below the tolerance, the width shrinks tenfold; training ends after the
/// narrowest width. Plain subgradient steps stall at kinks, where only tiny
/// steps decrease the objective and a relative-change rule stops too early.
fn train_primal<L>(
    x: &ArrayView2<f64>,
    c_reg: f64,
    cfg: &SolverConfig,
    loss: L,
) -> Result<(Array1<f64>, TrainingSummary)>
where
    L: Fn(&Array1<f64>, f64) -> LossEval,
{
    cfg.validate()?;
    let m = x.ncols();
    let objective = |v: &Array1<f64>, mu: f64| -> (f64, Array1<f64>, Array1<f64>) {
        let f = affine(x, v, 0.0);
        let (l, dl, ddl) = loss(&f, mu);
        let w = v.slice(ndarray::s![..m]);
        let mut g = Array1::zeros(m + 1);
        g.slice_mut(ndarray::s![..m]).assign(&(&w + &(x.t().dot(&dl) * c_reg)));
        g[m] = c_reg * dl.sum();
        (0.5 * w.dot(&w) + c_reg * l, g, ddl)
    };
    let exact = |v: &Array1<f64>| objective(v, 0.0).0;

    let mut v = Array1::zeros(m + 1);
    let mut f = exact(&v);
    let mut trace = vec![f];
    let mut iterations = 0;
    let mut stop = TrainStop::MaxIters;
    let mut stage = 0;

    while iterations < cfg.max_iters {
        let mu = SMOOTHING[stage];
        let (_, g, curvature) = objective(&v, mu);
        let mut advance = g.iter().all(|&gi| gi == 0.0);
        let mut reason = TrainStop::Tolerance;
        if !advance {
            let mut next = None;
            let candidates = [newton_direction(x, c_reg, &curvature, &g), Some(-&g)];
            for dir in candidates.into_iter().flatten() {
                let slope = -g.dot(&dir);
                if !(slope > 0.0) {
                    continue;
                }
                next = match cfg.line_search {
                    LineSearch::Fixed => Some(&v + &(&dir * cfg.gamma)),
                    LineSearch::Backtracking {
                        shrink,
                        sufficient_decrease,
                    } => match armijo_search(f, slope, cfg.gamma, shrink, sufficient_decrease, |s| {
                        Ok(exact(&(&v + &(&dir * s))))
                    }) {
                        Ok((accepted, _)) => Some(&v + &(&dir * accepted)),
                        Err(MtfsError::StepFailure { .. }) => None,
                        Err(e) => return Err(e),
                    },
                };
                if next.is_some() {
                    break;
                }
            }
            match next {
                Some(next) => {
                    iterations += 1;
                    let f_next = exact(&next);
                    if !f_next.is_finite() || !next.iter().all(|p| p.is_finite()) {
                        return Err(MtfsError::Divergence {
                            iteration: iterations,
                        });
                    }
                    let change =
                        relative_change(v.iter().copied(), next.iter().copied(), cfg.denom_floor);
                    v = next;
                    f = f_next;
                    if cfg.trace_every > 0 && iterations % cfg.trace_every == 0 {
                        trace.push(f);
                    }
                    advance = change < cfg.tolerance;
                }
                None => {
                    advance = true;
                    reason = TrainStop::NoDescent;
                }
            }
        }
        if advance {
            if stage + 1 == SMOOTHING.len() {
                stop = reason;
                break;
            }
            stage += 1;
        }
    }

    let value = exact(&v);
    if !value.is_finite() {
        return Err(MtfsError::Divergence {
            iteration: iterations,
        });
    }
    Ok((
        v,
        TrainingSummary {
            iterations,
            converged: stop != TrainStop::MaxIters,
            stop_reason: stop,
            objective: value,
            objective_trace: trace,
        },
    ))
}

fn affine(x: &ArrayView2<f64>, v: &Array1<f64>, offset: f64) -> Array1<f64> {
    let m = x.ncols();
    x.dot(&v.slice(ndarray::s![..m])) + (v[m] + offset)
}

fn validate_c(c_reg: f64) -> Result<()> {
    if !(c_reg > 0.0 && c_reg.is_finite()) {
        return Err(MtfsError::Validation(format!("C must be > 0, got {c_reg}")));
    }
    Ok(())
}

/// Minimizes `1/2 ||w||^2 + C sum_i max(0, 1 - y_i (w.x_i + b))` with labels
/// mapped `1 -> +1`, `0 -> -1`.
pub fn train_svm(d: &Dataset, c_reg: f64, cfg: &SolverConfig) -> Result<SvmModel> {
    validate_c(c_reg)?;
    let n_pos = d.failure_type.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 || n_pos == d.n_rows() {
        return Err(MtfsError::DegenerateLabels(format!(
            "SVM training set has a single class ({n_pos} positive of {})",
            d.n_rows()
        )));
    }
    let m = d.n_features();
    let x = d.features.view();
    let y: Array1<f64> = d
        .failure_type
        .iter()
        .map(|&t| if t == 1 { 1.0 } else { -1.0 })
        .collect();

    let (v, training) = train_primal(&x, c_reg, cfg, |f, mu| {
        let mut total = 0.0;
        let mut grad = Array1::zeros(f.len());
        let mut curv = Array1::zeros(f.len());
        for (i, (fi, yi)) in f.iter().zip(&y).enumerate() {
            let (l, dl, ddl) = smooth_plus(1.0 - yi * fi, mu);
            total += l;
            grad[i] = -yi * dl;
            curv[i] = ddl;
        }
        (total, grad, curv)
    })?;
    Ok(SvmModel {
        feature_names: d.feature_names.clone(),
        weights: v.slice(ndarray::s![..m]).to_vec(),
        bias: v[m],
        c_reg,
        standardization: Standardization::from_dataset(d),
        training,
    })
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Minimizes `1/2 ||w||^2 + C sum_i max(0, |y_i - (w.x_i + b)| - epsilon)`.
///
/// The bias is learned as an offset from the median target, which makes the
/// fit equivariant to shifts of the targets.
pub fn train_svr(d: &Dataset, epsilon: f64, c_reg: f64, cfg: &SolverConfig) -> Result<SvrModel> {
    validate_c(c_reg)?;
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(MtfsError::Validation(format!(
            "epsilon must be >= 0, got {epsilon}"
        )));
    }
    check_len(d.n_rows(), d.rul.len(), "SVR targets")?;
    let m = d.n_features();
    let x = d.features.view();
    let center = median(d.rul.as_slice().unwrap_or(&d.rul.to_vec()));
    let y = &d.rul - center;

    // max(0, |r| - eps) = max(0, r - eps) + max(0, -r - eps) for eps >= 0.
    let (v, training) = train_primal(&x, c_reg, cfg, |f, mu| {
        let mut total = 0.0;
        let mut grad = Array1::zeros(f.len());
        let mut curv = Array1::zeros(f.len());
        for (i, (fi, yi)) in f.iter().zip(&y).enumerate() {
            let r = yi - fi;
            let (l_hi, d_hi, dd_hi) = smooth_plus(r - epsilon, mu);
            let (l_lo, d_lo, dd_lo) = smooth_plus(-r - epsilon, mu);
            total += l_hi + l_lo;
            grad[i] = d_lo - d_hi;
            curv[i] = dd_hi + dd_lo;
        }
        (total, grad, curv)
    })?;
    Ok(SvrModel {
        feature_names: d.feature_names.clone(),
        weights: v.slice(ndarray::s![..m]).to_vec(),
        bias: center + v[m],
        epsilon,
        c_reg,
        standardization: Standardization::from_dataset(d),
        training,
    })
}

fn linear_score(weights: &[f64], bias: f64, x: &[f64]) -> Result<f64> {
    check_len(weights.len(), x.len(), "feature vector")?;
    Ok(weights.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + bias)
}

pub fn decision_value(m: &SvmModel, x: &[f64]) -> Result<f64> {
    linear_score(&m.weights, m.bias, x)
}

/// `1` (replace) when the decision value is `>= 0`, else `0` (turn).
pub fn predict_class(m: &SvmModel, x: &[f64]) -> Result<u8> {
    Ok(u8::from(decision_value(m, x)? >= 0.0))
}

pub fn predict_rul(m: &SvrModel, x: &[f64]) -> Result<f64> {
    linear_score(&m.weights, m.bias, x)
}

/// Decision values for every row of a (standardized) feature matrix.
pub fn decision_values(m: &SvmModel, x: ArrayView2<f64>) -> Result<Vec<f64>> {
    x.rows()
        .into_iter()
        .map(|r| decision_value(m, &row_vec(r)))
        .collect()
}

pub fn predict_rul_rows(m: &SvrModel, x: ArrayView2<f64>) -> Result<Vec<f64>> {
    x.rows()
        .into_iter()
        .map(|r| predict_rul(m, &row_vec(r)))
        .collect()
}

fn row_vec(r: ArrayView1<f64>) -> Vec<f64> {
    r.iter().copied().collect()
}

fn standardize_raw(s: &Option<Standardization>, raw: &[f64]) -> Vec<f64> {
    match s {
        Some(s) => s.apply(raw),
        None => raw.to_vec(),
    }
}

impl SvmModel {
    /// Class for a raw feature row, applying the stored standardization.
    pub fn predict_raw(&self, raw: &[f64]) -> Result<u8> {
        check_len(self.weights.len(), raw.len(), "raw feature vector")?;
        predict_class(self, &standardize_raw(&self.standardization, raw))
    }
}

impl SvrModel {
    pub fn predict_raw(&self, raw: &[f64]) -> Result<f64> {
        check_len(self.weights.len(), raw.len(), "raw feature vector")?;
        predict_rul(self, &standardize_raw(&self.standardization, raw))
    }
}
