//! Metrics and k-fold cross-validation of the select-then-predict pipeline.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{apply_standardization, standardize, Dataset};
use crate::error::{check_len, MtfsError, Result};
use crate::objective::{Hyperparams, PenaltyMode};
use crate::path::{
    lambda_max, lambda_max_per_task, select_common, select_task, SelectionCriteria, Task,
};
use crate::predictors::{
    decision_values, predict_rul_rows, predictor_solver_config, train_svm, train_svr,
};
use crate::solver::{default_init, fit, SolverConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    /// Positive class is `1` (replace).
    pub fn from_labels(truth: &[u8], predicted: &[u8]) -> Result<Self> {
        check_len(truth.len(), predicted.len(), "predicted labels")?;
        let mut cm = ConfusionMatrix::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t == 1, p == 1) {
                (true, true) => cm.tp += 1,
                (false, true) => cm.fp += 1,
                (true, false) => cm.fn_ += 1,
                (false, false) => cm.tn += 1,
            }
        }
        Ok(cm)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&self, other: &ConfusionMatrix) -> ConfusionMatrix {
        ConfusionMatrix {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    /// Set when `tp + fp = 0` (precision reported as 0).
    pub precision_degenerate: bool,
    /// Set when `tp + fn = 0` (recall reported as 0).
    pub recall_degenerate: bool,
}

/// `TP / (TP + FP)` and `TP / (TP + FN)`; empty denominators give 0 and
/// raise the matching degenerate flag.
pub fn precision_recall(cm: &ConfusionMatrix) -> PrecisionRecall {
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            (0.0, true)
        } else {
            (num as f64 / den as f64, false)
        }
    };
    let (precision, precision_degenerate) = ratio(cm.tp, cm.tp + cm.fp);
    let (recall, recall_degenerate) = ratio(cm.tp, cm.tp + cm.fn_);
    PrecisionRecall {
        precision,
        recall,
        precision_degenerate,
        recall_degenerate,
    }
}

/// Absolute percentage errors `|y - yhat| / |y|`.
pub fn ape(y_true: &[f64], y_pred: &[f64]) -> Result<Vec<f64>> {
    check_len(y_true.len(), y_pred.len(), "predicted RUL")?;
    y_true
        .iter()
        .zip(y_pred)
        .enumerate()
        .map(|(i, (&t, &p))| {
            if t == 0.0 {
                Err(MtfsError::InvalidRow {
                    row: i,
                    message: "true RUL is 0; percentage error undefined (filter the RUL window first)"
                        .into(),
                })
            } else {
                Ok((t - p).abs() / t.abs())
            }
        })
        .collect()
}

pub fn mape(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.is_empty() {
        return Err(MtfsError::EmptyInput("MAPE of no observations".into()));
    }
    let errors = ape(y_true, y_pred)?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

/// ROC polyline from sweeping the threshold over the distinct scores
/// (predict positive when `score >= threshold`), from `(0, 0)` to `(1, 1)`.
pub fn roc_points(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    check_len(scores.len(), labels.len(), "ROC labels")?;
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MtfsError::DegenerateLabels(
            "ROC needs at least one example of each class".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    if points.last() != Some(&(1.0, 1.0)) {
        points.push((1.0, 1.0));
    }
    Ok(points)
}

/// Trapezoidal area under a polyline sorted by the first coordinate.
pub fn polyline_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Seeded shuffle split into `k` disjoint folds whose sizes differ by at
/// most one. Indices inside each fold are sorted.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(MtfsError::Validation(format!("k must be >= 2, got {k}")));
    }
    if n < k {
        return Err(MtfsError::Validation(format!(
            "cannot split {n} rows into {k} folds"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, i) in idx.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// One shared feature set from the group-penalized joint fit.
    Mtfs,
    /// Separate L1-penalized selection per task.
    SingleTask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FeatureSource {
    /// Select features inside each fold from training rows only.
    InFold,
    /// Use these lists in every fold.
    Fixed { reg: Vec<String>, cls: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub method: Method,
    pub theta: f64,
    /// `lambda / lambda_max` used for in-fold selection.
    pub ratio: f64,
    pub lambda_max: Option<f64>,
    pub solver: SolverConfig,
    pub criteria: SelectionCriteria,
    pub features: FeatureSource,
    pub svm_c: f64,
    pub svr_c: f64,
    pub svr_epsilon: f64,
    pub predictor_solver: SolverConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            method: Method::Mtfs,
            theta: 1.0,
            ratio: 0.1,
            lambda_max: None,
            solver: SolverConfig {
                gamma: 1.0,
                trace_every: 0,
                ..SolverConfig::default()
            },
            criteria: SelectionCriteria::default(),
            features: FeatureSource::InFold,
            svm_c: 1.0,
            svr_c: 1.0,
            svr_epsilon: 10.0,
            predictor_solver: SolverConfig {
                trace_every: 0,
                ..predictor_solver_config()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApeSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl ApeSummary {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(ApeSummary {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: quantile(&v, 0.5),
            q1: quantile(&v, 0.25),
            q3: quantile(&v, 0.75),
            min: v[0],
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldDetail {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Features used by the SVR.
    pub reg_features: Vec<String>,
    /// Features used by the SVM.
    pub cls_features: Vec<String>,
    pub mape: f64,
    pub precision: f64,
    pub recall: f64,
    pub confusion: ConfusionMatrix,
    pub test_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub k: usize,
    pub seed: u64,
    /// Means over folds.
    pub mape: f64,
    pub precision: f64,
    pub recall: f64,
    pub precision_degenerate: bool,
    pub recall_degenerate: bool,
    /// Pooled over all held-out rows.
    pub confusion: ConfusionMatrix,
    pub roc: Vec<(f64, f64)>,
    pub auc: f64,
    /// Keyed `car_kind&wheel_size` when both strata columns are present.
    pub ape_per_group: BTreeMap<String, ApeSummary>,
    pub fold_details: Vec<FoldDetail>,
}

struct FoldOutcome {
    detail: FoldDetail,
    degenerate: (bool, bool),
    scores: Vec<f64>,
    ape: Vec<f64>,
}

/// Standardization fitted on `train` and applied to both parts.
fn standardize_split(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset)> {
    let (train_s, _) = standardize(train)?;
    let test_s = apply_standardization(
        &test.select_features_by_name(&train_s.feature_names)?,
        &train_s.column_means,
        &train_s.column_stds,
    )?;
    Ok((train_s, test_s))
}

/// Features for the SVR and the SVM chosen from standardized training rows.
pub fn select_features(train: &Dataset, cfg: &PipelineConfig) -> Result<(Vec<String>, Vec<String>)> {
    if let FeatureSource::Fixed { reg, cls } = &cfg.features {
        return Ok((reg.clone(), cls.clone()));
    }
    let init = default_init(train);
    match cfg.method {
        Method::Mtfs => {
            let lmax = match cfg.lambda_max {
                Some(v) => v,
                None => lambda_max(train, cfg.theta)?,
            };
            let h = Hyperparams::new(cfg.theta, cfg.ratio * lmax, PenaltyMode::GroupLasso)?;
            let res = fit(train, &h, &cfg.solver, &init)?;
            let common = select_common(&res.params, &train.feature_names, &cfg.criteria);
            Ok((common.clone(), common))
        }
        Method::SingleTask => {
            let (lmax_r, lmax_c) = match cfg.lambda_max {
                Some(v) => (v, v),
                None => lambda_max_per_task(train, cfg.theta)?,
            };
            let fit_task = |lambda: f64| -> Result<_> {
                let h = Hyperparams::new(cfg.theta, lambda, PenaltyMode::Lasso)?;
                Ok(fit(train, &h, &cfg.solver, &init)?.params)
            };
            let pr = fit_task(cfg.ratio * lmax_r)?;
            let pc = fit_task(cfg.ratio * lmax_c)?;
            Ok((
                select_task(&pr, &train.feature_names, Task::Regression, cfg.criteria.reg_threshold),
                select_task(&pc, &train.feature_names, Task::Classification, cfg.criteria.cls_threshold),
            ))
        }
    }
}

fn run_fold(
    d: &Dataset,
    cfg: &PipelineConfig,
    folds: &[Vec<usize>],
    f: usize,
    seed: u64,
) -> Result<FoldOutcome> {
    let test_rows = &folds[f];
    let train_rows: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|(g, _)| *g != f)
        .flat_map(|(_, rows)| rows.iter().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let train = d.select_rows(&train_rows);
    let test = d.select_rows(test_rows);
    let n_pos = train.failure_type.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 || n_pos == train.n_rows() {
        return Err(MtfsError::DegenerateLabels(format!(
            "fold {f} (seed {seed}) has single-class training labels"
        )));
    }

    let (train_s, test_s) = standardize_split(&train, &test)?;
    let (reg_features, cls_features) = select_features(&train_s, cfg)?;

    let svr = train_svr(
        &train_s.select_features_by_name(&reg_features)?,
        cfg.svr_epsilon,
        cfg.svr_c,
        &cfg.predictor_solver,
    )?;
    let svm = train_svm(
        &train_s.select_features_by_name(&cls_features)?,
        cfg.svm_c,
        &cfg.predictor_solver,
    )?;

    let rul_pred = predict_rul_rows(&svr, test_s.select_features_by_name(&reg_features)?.features.view())?;
    let scores = decision_values(&svm, test_s.select_features_by_name(&cls_features)?.features.view())?;
    let predicted: Vec<u8> = scores.iter().map(|&s| u8::from(s >= 0.0)).collect();

    let truth_rul = test.rul.to_vec();
    let errors = ape(&truth_rul, &rul_pred)?;
    let confusion = ConfusionMatrix::from_labels(&test.failure_type, &predicted)?;
    let pr = precision_recall(&confusion);
    Ok(FoldOutcome {
        detail: FoldDetail {
            fold: f,
            n_train: train.n_rows(),
            n_test: test.n_rows(),
            reg_features,
            cls_features,
            mape: errors.iter().sum::<f64>() / errors.len() as f64,
            precision: pr.precision,
            recall: pr.recall,
            confusion,
            test_rows: test_rows.clone(),
        },
        degenerate: (pr.precision_degenerate, pr.recall_degenerate),
        scores,
        ape: errors,
    })
}

fn group_labels(d: &Dataset) -> Option<Vec<String>> {
    let kind = d.strata.get("car_kind")?;
    let size = d.strata.get("wheel_size")?;
    Some(kind.iter().zip(size).map(|(k, s)| format!("{k}&{s}")).collect())
}

/// k-fold cross-validation of select-then-predict on a raw (unstandardized)
/// dataset. Standardization, selection and training use training rows only.
/// Folds run in parallel; the report is assembled in fold order.
pub fn cross_validate(d: &Dataset, cfg: &PipelineConfig, k: usize, seed: u64) -> Result<EvalReport> {
    if d.standardized {
        return Err(MtfsError::Validation(
            "cross-validation expects raw features; standardization is fitted per fold".into(),
        ));
    }
    let folds = fold_assignment(d.n_rows(), k, seed)?;
    let outcomes: Vec<FoldOutcome> = (0..k)
        .into_par_iter()
        .map(|f| run_fold(d, cfg, &folds, f, seed))
        .collect::<Result<_>>()?;

    let mean = |get: fn(&FoldDetail) -> f64| {
        outcomes.iter().map(|o| get(&o.detail)).sum::<f64>() / k as f64
    };
    let mut scores = vec![0.0; d.n_rows()];
    let mut all_ape = vec![0.0; d.n_rows()];
    let mut confusion = ConfusionMatrix::default();
    for o in &outcomes {
        for (j, &row) in o.detail.test_rows.iter().enumerate() {
            scores[row] = o.scores[j];
            all_ape[row] = o.ape[j];
        }
        confusion = confusion.add(&o.detail.confusion);
    }

    let roc = roc_points(&scores, &d.failure_type)?;
    let mut ape_per_group = BTreeMap::new();
    if let Some(labels) = group_labels(d) {
        let mut buckets: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (label, e) in labels.into_iter().zip(&all_ape) {
            buckets.entry(label).or_default().push(*e);
        }
        for (label, values) in buckets {
            if let Some(s) = ApeSummary::from_values(&values) {
                ape_per_group.insert(label, s);
            }
        }
    }

    Ok(EvalReport {
        method: cfg.method,
        k,
        seed,
        mape: mean(|f| f.mape),
        precision: mean(|f| f.precision),
        recall: mean(|f| f.recall),
        precision_degenerate: outcomes.iter().any(|o| o.degenerate.0),
        recall_degenerate: outcomes.iter().any(|o| o.degenerate.1),
        confusion,
        auc: polyline_area(&roc),
        roc,
        ape_per_group,
        fold_details: outcomes.into_iter().map(|o| o.detail).collect(),
    })
}

/// F1 of a selected feature set against a planted support.
pub fn support_f1<S: AsRef<str>, T: AsRef<str>>(selected: &[S], truth: &[T]) -> f64 {
    let sel: BTreeSet<&str> = selected.iter().map(AsRef::as_ref).collect();
    let tru: BTreeSet<&str> = truth.iter().map(AsRef::as_ref).collect();
    let hits = sel.intersection(&tru).count() as f64;
    if sel.is_empty() && tru.is_empty() {
        return 1.0;
    }
    2.0 * hits / (sel.len() + tru.len()) as f64
}

/// Mean of the two per-task F1 scores for one fold.
pub fn fold_support_f1<T: AsRef<str>>(fold: &FoldDetail, truth: &[T]) -> f64 {
    0.5 * (support_f1(&fold.reg_features, truth) + support_f1(&fold.cls_features, truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: Method,
    pub runs: usize,
    pub mape_mean: f64,
    pub mape_se: f64,
    pub precision_mean: f64,
    pub precision_se: f64,
    pub recall_mean: f64,
    pub recall_se: f64,
    /// Present when a planted support was supplied.
    pub support_f1_mean: Option<f64>,
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Cross-validates each method under every seed. Means and standard errors
/// are taken over all (seed, fold) evaluations.
pub fn compare_methods<T: AsRef<str> + Sync>(
    d: &Dataset,
    methods: &[Method],
    base: &PipelineConfig,
    k: usize,
    seeds: &[u64],
    truth: Option<&[T]>,
) -> Result<Vec<ComparisonRow>> {
    if seeds.is_empty() {
        return Err(MtfsError::Validation("compare_methods needs at least one seed".into()));
    }
    methods
        .iter()
        .map(|&method| {
            let cfg = PipelineConfig {
                method,
                ..base.clone()
            };
            let reports: Vec<EvalReport> = seeds
                .par_iter()
                .map(|&s| cross_validate(d, &cfg, k, s))
                .collect::<Result<_>>()?;
            let folds: Vec<&FoldDetail> = reports.iter().flat_map(|r| &r.fold_details).collect();
            let collect = |get: fn(&FoldDetail) -> f64| folds.iter().map(|f| get(f)).collect::<Vec<_>>();
            let (mape_mean, mape_se) = mean_se(&collect(|f| f.mape));
            let (precision_mean, precision_se) = mean_se(&collect(|f| f.precision));
            let (recall_mean, recall_se) = mean_se(&collect(|f| f.recall));
            let support_f1_mean = truth.map(|t| {
                folds.iter().map(|f| fold_support_f1(f, t)).sum::<f64>() / folds.len() as f64
            });
            Ok(ComparisonRow {
                method,
                runs: folds.len(),
                mape_mean,
                mape_se,
                precision_mean,
                precision_se,
                recall_mean,
                recall_se,
                support_f1_mean,
            })
        })
        .collect()
}
