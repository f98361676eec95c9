//! First-order minimization of the joint objective.
//!
//! Ridge mode runs plain gradient descent `w <- w - gamma * g`. The
//! non-smooth modes take the same gradient step on the smooth part and then
//! apply the proximal map of the penalty (block soft-thresholding for the
//! group norm, scalar soft-thresholding for L1), which is what produces
//! exact zeros. Iteration stops once the mean relative parameter change
//! drops below the tolerance.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{MtfsError, Result};
use crate::objective::{
    breakdown_from, check_dims, gradient_from, linear_parts, penalty, smooth_from, Hyperparams, Linear,
    LossBreakdown, ModelParams, PenaltyMode,
};

/// Upper bound on step reductions in a single line search.
pub const MAX_SHRINKS: usize = 60;

/// Slack, in units of `f64::EPSILON * |f|`, granted to decrease tests so
/// rounding noise near a stationary point is not mistaken for ascent.
const ROUNDING_SLACK: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LineSearch {
    Fixed,
    Backtracking { shrink: f64, sufficient_decrease: f64 },
}

impl LineSearch {
    pub fn backtracking() -> Self {
        LineSearch::Backtracking {
            shrink: 0.5,
            sufficient_decrease: 1e-4,
        }
    }

    fn constants(&self) -> (f64, f64) {
        match *self {
            LineSearch::Backtracking {
                shrink,
                sufficient_decrease,
            } => (shrink, sufficient_decrease),
            LineSearch::Fixed => (0.5, 1e-4),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Initial (Backtracking) or constant (Fixed) step size.
    pub gamma: f64,
    pub line_search: LineSearch,
    /// Threshold on the mean relative parameter change.
    pub tolerance: f64,
    pub max_iters: usize,
    /// Floor on `|w|` in the relative-change denominator.
    pub denom_floor: f64,
    /// Keep every k-th loss breakdown in the trace (0 disables the trace).
    pub trace_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gamma: 1e-4,
            line_search: LineSearch::backtracking(),
            tolerance: 1e-6,
            max_iters: 100_000,
            denom_floor: 1e-8,
            trace_every: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MtfsError::Validation(msg));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be > 0, got {}", self.gamma));
        }
        if !(self.tolerance > 0.0) {
            return bad(format!("tolerance must be > 0, got {}", self.tolerance));
        }
        if !(self.denom_floor > 0.0) {
            return bad(format!("denom_floor must be > 0, got {}", self.denom_floor));
        }
        if let LineSearch::Backtracking {
            shrink,
            sufficient_decrease,
        } = self.line_search
        {
            if !(shrink > 0.0 && shrink < 1.0) {
                return bad(format!("shrink factor must lie in (0, 1), got {shrink}"));
            }
            if !(sufficient_decrease > 0.0 && sufficient_decrease < 1.0) {
                return bad(format!(
                    "sufficient-decrease constant must lie in (0, 1), got {sufficient_decrease}"
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    MaxIters,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub breakdown: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    pub iterations: usize,
    /// Objective at the returned parameters.
    pub breakdown: LossBreakdown,
    /// Starts with iteration 0 (the initial point) and always ends with the
    /// final iterate.
    pub breakdown_trace: Vec<TraceEntry>,
    pub converged: bool,
    pub stop_reason: StopReason,
}

pub fn soft_threshold(x: f64, threshold: f64) -> f64 {
    if x > threshold {
        x - threshold
    } else if x < -threshold {
        x + threshold
    } else {
        0.0
    }
}

/// Proximal map of `threshold * ||(a, b)||_2`.
pub fn block_soft_threshold(group: (f64, f64), threshold: f64) -> (f64, f64) {
    let (a, b) = group;
    let norm = a.hypot(b);
    if norm <= threshold {
        (0.0, 0.0)
    } else {
        let scale = 1.0 - threshold / norm;
        (a * scale, b * scale)
    }
}

/// Proximal map of `threshold * penalty` on the coefficient blocks;
/// intercepts pass through untouched. Identity for the smooth ridge penalty,
/// which is handled in the gradient instead.
pub fn prox(p: &ModelParams, mode: PenaltyMode, threshold: f64) -> ModelParams {
    let mut out = p.clone();
    match mode {
        PenaltyMode::Ridge => {}
        PenaltyMode::GroupLasso => {
            for j in 0..p.n_features() {
                let (a, b) = block_soft_threshold((p.a[j], p.b[j]), threshold);
                out.a[j] = a;
                out.b[j] = b;
            }
        }
        PenaltyMode::Lasso => {
            out.a.mapv_inplace(|x| soft_threshold(x, threshold));
            out.b.mapv_inplace(|x| soft_threshold(x, threshold));
        }
    }
    out
}

/// `mean_k |new_k - old_k| / max(|old_k|, floor)`.
pub fn relative_change<I, J>(old: I, new: J, floor: f64) -> f64
where
    I: IntoIterator<Item = f64>,
    J: IntoIterator<Item = f64>,
{
    let (sum, count) = old
        .into_iter()
        .zip(new)
        .fold((0.0, 0usize), |(s, c), (o, n)| {
            (s + (n - o).abs() / o.abs().max(floor), c + 1)
        });
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn slack(f: f64) -> f64 {
    ROUNDING_SLACK * f64::EPSILON * f.abs()
}

/// Armijo backtracking along `-g`: returns the largest `gamma0 * beta^k`,
/// `k <= MAX_SHRINKS`, with `f(step) <= f0 - c * step * ||g||^2`, together
/// with the value at the accepted step. `eval(step)` evaluates the objective
/// at `x - step * g`; non-finite values count as rejections.
pub fn armijo_search<F>(
    f0: f64,
    grad_norm_sq: f64,
    gamma0: f64,
    shrink: f64,
    c: f64,
    mut eval: F,
) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    if grad_norm_sq == 0.0 {
        return Ok((gamma0, f0));
    }
    let mut step = gamma0;
    for _ in 0..=MAX_SHRINKS {
        let f = eval(step)?;
        if f.is_finite() && f <= f0 - c * step * grad_norm_sq {
            return Ok((step, f));
        }
        step *= shrink;
    }
    Err(MtfsError::StepFailure {
        shrinks: MAX_SHRINKS,
    })
}

/// Accepted Armijo step on the smooth part of the objective, starting from
/// `cfg.gamma`.
pub fn backtracking_step(
    d: &Dataset,
    h: &Hyperparams,
    cfg: &SolverConfig,
    p: &ModelParams,
    g: &ModelParams,
) -> Result<f64> {
    check_dims(d, p)?;
    let (shrink, c) = cfg.line_search.constants();
    let f0 = smooth_from(d, p, h, &linear_parts(d, p));
    let (step, _) = armijo_search(f0, g.norm_sq(), cfg.gamma, shrink, c, |step| {
        let trial = p.axpy(-step, g);
        Ok(smooth_from(d, &trial, h, &linear_parts(d, &trial)))
    })?;
    Ok(step)
}

/// Intercepts at the intercept-only optimum (mean RUL; log-odds of the
/// positive rate clamped to `[0.01, 0.99]`), coefficients zero.
pub fn default_init(d: &Dataset) -> ModelParams {
    let mut p = ModelParams::zeros(d.n_features());
    p.a0 = if d.n_rows() > 0 { d.rul.mean().unwrap_or(0.0) } else { 0.0 };
    let rate = d.positive_fraction().clamp(0.01, 0.99);
    p.b0 = (rate / (1.0 - rate)).ln();
    p
}

struct Iterate {
    params: ModelParams,
    linear: Linear,
    smooth: f64,
}

impl Iterate {
    fn new(d: &Dataset, h: &Hyperparams, params: ModelParams) -> Self {
        let linear = linear_parts(d, &params);
        let smooth = smooth_from(d, &params, h, &linear);
        Self {
            params,
            linear,
            smooth,
        }
    }
}

/// Objective including the nonsmooth penalty.
fn total_of(h: &Hyperparams, it: &Iterate) -> f64 {
    if h.penalty_mode.is_smooth() {
        it.smooth
    } else {
        it.smooth + h.lambda * penalty(&it.params, h.penalty_mode)
    }
}

enum StepOutcome {
    Accepted { step: f64, next: Iterate, decreased: bool },
    /// No trial was accepted; carries the relative change of the smallest one.
    Exhausted { smallest_change: f64 },
}

/// Backtracking from `gamma0`. Ridge mode uses the Armijo test on the
/// smooth objective; the proximal modes use the composite test
/// `f(x+) <= f(x) + g.(x+ - x) + ||x+ - x||^2 / (2 step)`. In both cases the
/// full objective may not increase, and a tie (no representable decrease)
/// is only accepted at steps no larger than `trusted`, the last step that
/// produced a strict decrease. Without that cap, points the objective can
/// no longer tell apart would let the step grow and the iterate wander.
#[allow(clippy::too_many_arguments)]
fn backtrack(
    d: &Dataset,
    h: &Hyperparams,
    cur: &Iterate,
    cur_total: f64,
    g: &ModelParams,
    gamma0: f64,
    (shrink, c): (f64, f64),
    trusted: f64,
    floor: f64,
) -> StepOutcome {
    let smooth_mode = h.penalty_mode.is_smooth();
    let grad_norm_sq = g.norm_sq();
    let mut step = gamma0;
    let mut smallest_change = f64::INFINITY;
    for _ in 0..=MAX_SHRINKS {
        let cand = if smooth_mode {
            cur.params.axpy(-step, g)
        } else {
            prox(&cur.params.axpy(-step, g), h.penalty_mode, step * h.lambda)
        };
        let next = Iterate::new(d, h, cand);
        let sufficient = if smooth_mode {
            next.smooth <= cur.smooth - c * step * grad_norm_sq
        } else {
            let diff = next.params.axpy(-1.0, &cur.params);
            let bound = cur.smooth + g.dot(&diff) + diff.norm_sq() / (2.0 * step);
            next.smooth <= bound + slack(cur.smooth)
        };
        let total = total_of(h, &next);
        if next.smooth.is_finite() && sufficient && total <= cur_total {
            let decreased = total < cur_total;
            if decreased || step <= trusted {
                return StepOutcome::Accepted {
                    step,
                    next,
                    decreased,
                };
            }
        }
        smallest_change = relative_change(cur.params.iter(), next.params.iter(), floor);
        step *= shrink;
    }
    StepOutcome::Exhausted { smallest_change }
}

/// Minimizes the joint objective from `init`.
///
/// Ridge mode takes plain gradient steps; GroupLasso and Lasso take
/// proximal-gradient steps (intercepts unpenalized). Stops when the mean
/// relative parameter change falls below `cfg.tolerance`. With backtracking
/// the objective trace is non-increasing.
///
/// If backtracking exhausts its shrinks while even the smallest trial moves
/// the parameters by less than the tolerance, the iterate is stationary to
/// rounding precision and the fit stops as converged; otherwise the failure
/// is reported as [`MtfsError::StepFailure`].
pub fn fit(
    d: &Dataset,
    h: &Hyperparams,
    cfg: &SolverConfig,
    init: &ModelParams,
) -> Result<FitResult> {
    h.validate()?;
    cfg.validate()?;
    check_dims(d, init)?;
    if !d.standardized {
        log::warn!("fitting on unstandardized features");
    }

    let mut cur = Iterate::new(d, h, init.clone());
    let mut breakdown = breakdown_from(d, &cur.params, h, &cur.linear);
    if !breakdown.is_finite() {
        return Err(MtfsError::Divergence { iteration: 0 });
    }
    let mut trace = Vec::new();
    if cfg.trace_every > 0 {
        trace.push(TraceEntry {
            iteration: 0,
            breakdown,
        });
    }

    let mut step = cfg.gamma;
    let mut trusted = 0.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        iterations += 1;
        let g = gradient_from(d, &cur.params, h, &cur.linear);

        let next = match cfg.line_search {
            LineSearch::Fixed => Iterate::new(
                d,
                h,
                prox(&cur.params.axpy(-cfg.gamma, &g), h.penalty_mode, cfg.gamma * h.lambda),
            ),
            LineSearch::Backtracking {
                shrink,
                sufficient_decrease,
            } => {
                // Let the step grow back after earlier reductions, never past gamma.
                let start = (step / shrink).min(cfg.gamma);
                match backtrack(
                    d,
                    h,
                    &cur,
                    breakdown.total,
                    &g,
                    start,
                    (shrink, sufficient_decrease),
                    trusted,
                    cfg.denom_floor,
                ) {
                    StepOutcome::Accepted {
                        step: accepted,
                        next,
                        decreased,
                    } => {
                        step = accepted;
                        if decreased {
                            trusted = accepted;
                        }
                        next
                    }
                    StepOutcome::Exhausted { smallest_change } => {
                        if smallest_change < cfg.tolerance {
                            converged = true;
                            break;
                        }
                        return Err(MtfsError::StepFailure {
                            shrinks: MAX_SHRINKS,
                        });
                    }
                }
            }
        };

        breakdown = breakdown_from(d, &next.params, h, &next.linear);
        if !breakdown.is_finite() || !next.params.is_finite() {
            return Err(MtfsError::Divergence {
                iteration: iterations,
            });
        }
        let change = relative_change(cur.params.iter(), next.params.iter(), cfg.denom_floor);
        cur = next;
        if cfg.trace_every > 0 && iterations % cfg.trace_every == 0 {
            trace.push(TraceEntry {
                iteration: iterations,
                breakdown,
            });
        }
        if change < cfg.tolerance {
            converged = true;
            break;
        }
    }

    if cfg.trace_every > 0 && trace.last().map(|t| t.iteration) != Some(iterations) {
        trace.push(TraceEntry {
            iteration: iterations,
            breakdown,
        });
    }

    Ok(FitResult {
        params: cur.params,
        iterations,
        breakdown,
        breakdown_trace: trace,
        converged,
        stop_reason: if converged {
            StopReason::Tolerance
        } else {
            StopReason::MaxIters
        },
    })
}
