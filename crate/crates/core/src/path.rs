//! Regularization path over `lambda / lambda_max` and feature selection.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{MtfsError, Result};
use crate::objective::{gradient_smooth, Hyperparams, LossBreakdown, ModelParams, PenaltyMode};
use crate::solver::{default_init, fit, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionMode {
    /// Keep a feature when both `|a_j|` and `|b_j|` clear their thresholds.
    Intersection,
    /// Keep a feature when `||(a_j, b_j)||_2 > cutoff`.
    GroupNorm { cutoff: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionCriteria {
    pub reg_threshold: f64,
    pub cls_threshold: f64,
    pub mode: SelectionMode,
}

impl Default for SelectionCriteria {
    fn default() -> Self {
        Self {
            reg_threshold: 0.01,
            cls_threshold: 0.01,
            mode: SelectionMode::Intersection,
        }
    }
}

impl SelectionCriteria {
    pub fn validate(&self) -> Result<()> {
        let cutoff = match self.mode {
            SelectionMode::GroupNorm { cutoff } => cutoff,
            SelectionMode::Intersection => 0.0,
        };
        if self.reg_threshold < 0.0 || self.cls_threshold < 0.0 || cutoff < 0.0 {
            return Err(MtfsError::Validation(
                "selection thresholds must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEntry {
    pub ratio: f64,
    pub lambda: f64,
    pub breakdown: LossBreakdown,
    pub iterations: usize,
    pub converged: bool,
    pub selected: Vec<String>,
    pub selected_count: usize,
    pub params: ModelParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathOptions {
    pub penalty_mode: PenaltyMode,
    /// Fixed `lambda_max` (e.g. an empirically chosen constant); computed
    /// from the data when absent.
    pub lambda_max: Option<f64>,
    pub warm_start: bool,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self {
            penalty_mode: PenaltyMode::GroupLasso,
            lambda_max: None,
            warm_start: true,
        }
    }
}

/// 0, 0.05, ..., 1.
pub fn default_ratio_grid() -> Vec<f64> {
    (0..=20).map(|i| f64::from(i) / 20.0).collect()
}

/// Smallest group-norm `lambda` for which all coefficient blocks are zero:
/// the largest `||(dL/da_j, dL/db_j)||_2` at zero coefficients with the
/// intercepts at their intercept-only optimum.
pub fn lambda_max(d: &Dataset, theta: f64) -> Result<f64> {
    let g = zero_gradient(d, theta)?;
    Ok((0..d.n_features())
        .map(|j| g.a[j].hypot(g.b[j]))
        .fold(0.0, f64::max))
}

/// Per-task analogue for the L1 penalty: `(max_j |dL/da_j|, max_j |dL/db_j|)`.
pub fn lambda_max_per_task(d: &Dataset, theta: f64) -> Result<(f64, f64)> {
    let g = zero_gradient(d, theta)?;
    let max_abs = |v: &ndarray::Array1<f64>| v.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
    Ok((max_abs(&g.a), max_abs(&g.b)))
}

fn zero_gradient(d: &Dataset, theta: f64) -> Result<ModelParams> {
    if !d.standardized {
        log::warn!("lambda_max computed on unstandardized features");
    }
    let h = Hyperparams::new(theta, 0.0, PenaltyMode::GroupLasso)?;
    gradient_smooth(d, &default_init(d), &h)
}

/// Names of the features kept by `criteria`, in dataset order.
pub fn select_common<S: AsRef<str>>(
    p: &ModelParams,
    names: &[S],
    criteria: &SelectionCriteria,
) -> Vec<String> {
    (0..p.n_features())
        .filter(|&j| match criteria.mode {
            SelectionMode::Intersection => {
                p.a[j].abs() > criteria.reg_threshold && p.b[j].abs() > criteria.cls_threshold
            }
            SelectionMode::GroupNorm { cutoff } => p.group_norm(j) > cutoff,
        })
        .map(|j| names[j].as_ref().to_string())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

/// Single-task selection: features whose coefficient for `task` exceeds
/// `threshold` in absolute value.
pub fn select_task<S: AsRef<str>>(
    p: &ModelParams,
    names: &[S],
    task: Task,
    threshold: f64,
) -> Vec<String> {
    let coef = match task {
        Task::Regression => &p.a,
        Task::Classification => &p.b,
    };
    coef.iter()
        .zip(names)
        .filter(|(c, _)| c.abs() > threshold)
        .map(|(_, n)| n.as_ref().to_string())
        .collect()
}

fn validate_ratios(ratios: &[f64]) -> Result<()> {
    if ratios.is_empty() {
        return Err(MtfsError::Validation("ratio grid is empty".into()));
    }
    if let Some(r) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(MtfsError::Validation(format!("ratio {r} outside [0, 1]")));
    }
    if ratios.windows(2).any(|w| w[0] > w[1]) {
        return Err(MtfsError::Validation("ratios must be sorted ascending".into()));
    }
    Ok(())
}

/// Fits one model per ratio and records loss decomposition and selection.
///
/// With `warm_start` the fits run from the largest `lambda` down, each
/// starting at the previous solution; otherwise every ratio starts from the
/// default initialization and ratios run in parallel. Entries come back in
/// the order of `ratios`.
pub fn sweep(
    d: &Dataset,
    theta: f64,
    ratios: &[f64],
    cfg: &SolverConfig,
    criteria: &SelectionCriteria,
    opts: &PathOptions,
) -> Result<Vec<PathEntry>> {
    validate_ratios(ratios)?;
    criteria.validate()?;
    let computed_max = lambda_max(d, theta)?;
    let lmax = opts.lambda_max.unwrap_or(computed_max);
    let base = Hyperparams::new(theta, 0.0, opts.penalty_mode)?;
    let init = default_init(d);

    let run = |ratio: f64, start: &ModelParams| -> Result<PathEntry> {
        let lambda = ratio * lmax;
        let h = base.with_lambda(lambda);
        // Above the computed lambda_max the solution is known to be the
        // intercept-only model.
        let start = if opts.penalty_mode == PenaltyMode::GroupLasso && lambda >= computed_max {
            &init
        } else {
            start
        };
        let res = fit(d, &h, cfg, start).map_err(|e| e.context(format!("ratio {ratio}")))?;
        let selected = select_common(&res.params, &d.feature_names, criteria);
        Ok(PathEntry {
            ratio,
            lambda,
            breakdown: res.breakdown,
            iterations: res.iterations,
            converged: res.converged,
            selected_count: selected.len(),
            selected,
            params: res.params,
        })
    };

    if opts.warm_start {
        let mut entries = Vec::with_capacity(ratios.len());
        let mut start = init.clone();
        for &ratio in ratios.iter().rev() {
            let e = run(ratio, &start)?;
            start = e.params.clone();
            entries.push(e);
        }
        entries.reverse();
        Ok(entries)
    } else {
        ratios.par_iter().map(|&r| run(r, &init)).collect()
    }
}

/// Path table: `ratio, lambda, L, L_c, lambda_Ln, theta_Lr, iterations,
/// selected_count, selected` (names joined with `;`).
pub fn write_path_csv<W: Write>(entries: &[PathEntry], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "ratio",
        "lambda",
        "L",
        "L_c",
        "lambda_Ln",
        "theta_Lr",
        "iterations",
        "selected_count",
        "selected",
    ])?;
    for e in entries {
        w.write_record([
            e.ratio.to_string(),
            e.lambda.to_string(),
            e.breakdown.total.to_string(),
            e.breakdown.l_c.to_string(),
            e.breakdown.lambda_l_n.to_string(),
            e.breakdown.theta_l_r.to_string(),
            e.iterations.to_string(),
            e.selected_count.to_string(),
            e.selected.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}
