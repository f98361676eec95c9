//! Dataset representation, preprocessing and ingestion.
//!
//! A [`Dataset`] pairs an `n x m` feature matrix with the two targets of the
//! joint problem: remaining useful life in days (regression) and the binary
//! failure type (classification, `1` = replace with a new wheelset, `0` =
//! turn). Optional per-row strata and event columns feed the competing-risk
//! analysis.

mod csv_io;
mod synth;

pub use csv_io::{load_csv, load_csv_from_reader, write_csv, ColumnRole, Schema};
pub use synth::{generate_synthetic, SynthSpec};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, MtfsError, Result};

/// Repair outcome that ended an observation, or censoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventType {
    /// Replacement with a new wheelset.
    N,
    /// Turning / re-profiling.
    T,
    /// Observation ended without a failure.
    #[serde(rename = "C")]
    Censored,
}

impl EventType {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventType::N => "N",
            EventType::T => "T",
            EventType::Censored => "C",
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventType {
    type Err = MtfsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "N" => Ok(EventType::N),
            "T" => Ok(EventType::T),
            "C" => Ok(EventType::Censored),
            other => Err(MtfsError::Validation(format!(
                "event type must be one of N, T, C (got {other:?})"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_time: f64,
    pub event_type: EventType,
    pub stratum_keys: BTreeMap<String, String>,
}

impl EventRecord {
    pub fn new(event_time: f64, event_type: EventType) -> Self {
        Self {
            event_time,
            event_type,
            stratum_keys: BTreeMap::new(),
        }
    }

    pub fn with_key(mut self, key: &str, value: &str) -> Self {
        self.stratum_keys.insert(key.to_string(), value.to_string());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub feature_names: Vec<String>,
    /// Remaining useful life, days.
    pub rul: Array1<f64>,
    pub failure_type: Vec<u8>,
    /// Stratum column name -> per-row value.
    pub strata: BTreeMap<String, Vec<String>>,
    pub event_time: Option<Vec<f64>>,
    pub event_type: Option<Vec<EventType>>,
    pub standardized: bool,
    /// Statistics used for standardization; empty until standardized.
    pub column_means: Vec<f64>,
    pub column_stds: Vec<f64>,
}

/// Row counts removed by [`filter_rul_window`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowReport {
    pub kept: usize,
    pub removed_below: usize,
    pub removed_above: usize,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        feature_names: Vec<String>,
        rul: Array1<f64>,
        failure_type: Vec<u8>,
    ) -> Result<Self> {
        let d = Dataset {
            features,
            feature_names,
            rul,
            failure_type,
            strata: BTreeMap::new(),
            event_time: None,
            event_type: None,
            standardized: false,
            column_means: Vec::new(),
            column_stds: Vec::new(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_rows();
        check_len(self.n_features(), self.feature_names.len(), "feature names")?;
        check_len(n, self.rul.len(), "rul length")?;
        check_len(n, self.failure_type.len(), "failure_type length")?;
        if let Some(i) = self.failure_type.iter().position(|&y| y > 1) {
            return Err(MtfsError::InvalidRow {
                row: i,
                message: format!("failure_type must be 0 or 1, got {}", self.failure_type[i]),
            });
        }
        for (name, values) in &self.strata {
            check_len(n, values.len(), &format!("stratum column {name}"))?;
        }
        if let Some(t) = &self.event_time {
            check_len(n, t.len(), "event_time length")?;
        }
        if let Some(t) = &self.event_type {
            check_len(n, t.len(), "event_type length")?;
        }
        if self.standardized {
            check_len(self.n_features(), self.column_means.len(), "column means")?;
            check_len(self.n_features(), self.column_stds.len(), "column stds")?;
        }
        Ok(())
    }

    /// Classification targets as `0.0` / `1.0`.
    pub fn labels(&self) -> Array1<f64> {
        self.failure_type.iter().map(|&y| f64::from(y)).collect()
    }

    pub fn positive_fraction(&self) -> f64 {
        if self.failure_type.is_empty() {
            return 0.0;
        }
        self.failure_type.iter().filter(|&&y| y == 1).count() as f64 / self.n_rows() as f64
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let pick_s = |v: &Vec<String>| rows.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
        Dataset {
            features: self.features.select(Axis(0), rows),
            feature_names: self.feature_names.clone(),
            rul: rows.iter().map(|&i| self.rul[i]).collect(),
            failure_type: rows.iter().map(|&i| self.failure_type[i]).collect(),
            strata: self
                .strata
                .iter()
                .map(|(k, v)| (k.clone(), pick_s(v)))
                .collect(),
            event_time: self
                .event_time
                .as_ref()
                .map(|t| rows.iter().map(|&i| t[i]).collect()),
            event_type: self
                .event_type
                .as_ref()
                .map(|t| rows.iter().map(|&i| t[i]).collect()),
            standardized: self.standardized,
            column_means: self.column_means.clone(),
            column_stds: self.column_stds.clone(),
        }
    }

    pub fn select_features(&self, cols: &[usize]) -> Dataset {
        let pick = |v: &Vec<f64>| {
            if v.is_empty() {
                Vec::new()
            } else {
                cols.iter().map(|&j| v[j]).collect()
            }
        };
        Dataset {
            features: self.features.select(Axis(1), cols),
            feature_names: cols.iter().map(|&j| self.feature_names[j].clone()).collect(),
            column_means: pick(&self.column_means),
            column_stds: pick(&self.column_stds),
            ..self.clone()
        }
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    /// Restricts the features to `names`, in the given order.
    pub fn select_features_by_name<S: AsRef<str>>(&self, names: &[S]) -> Result<Dataset> {
        let cols = names
            .iter()
            .map(|name| {
                self.feature_index(name.as_ref()).ok_or_else(|| {
                    MtfsError::Schema(format!("unknown feature column {:?}", name.as_ref()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select_features(&cols))
    }

    /// Event records built from the event columns, carrying every stratum
    /// column as a key.
    pub fn event_records(&self) -> Result<Vec<EventRecord>> {
        let (Some(times), Some(types)) = (&self.event_time, &self.event_type) else {
            return Err(MtfsError::Schema(
                "dataset has no event_time/event_type columns".to_string(),
            ));
        };
        Ok((0..self.n_rows())
            .map(|i| EventRecord {
                event_time: times[i],
                event_type: types[i],
                stratum_keys: self
                    .strata
                    .iter()
                    .map(|(k, v)| (k.clone(), v[i].clone()))
                    .collect(),
            })
            .collect())
    }
}

/// Sample mean and standard deviation (n - 1 denominator) of each column.
pub fn column_stats(features: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = features.nrows() as f64;
    features
        .axis_iter(Axis(1))
        .map(|col| {
            let mean = col.sum() / n;
            let ss: f64 = col.iter().map(|x| (x - mean) * (x - mean)).sum();
            (mean, (ss / (n - 1.0)).sqrt())
        })
        .unzip()
}

fn is_constant(features: &Array2<f64>, j: usize) -> bool {
    let col = features.column(j);
    let first = col[0];
    col.iter().all(|&x| x == first)
}

/// Centers and scales every feature column to sample mean 0 and sample
/// standard deviation 1. Constant columns are dropped; their names are
/// returned alongside the standardized dataset.
pub fn standardize(d: &Dataset) -> Result<(Dataset, Vec<String>)> {
    if d.standardized {
        return Err(MtfsError::Validation("dataset is already standardized".into()));
    }
    if d.n_rows() < 2 {
        return Err(MtfsError::Validation(
            "standardization needs at least 2 rows".into(),
        ));
    }
    let (keep, dropped): (Vec<usize>, Vec<usize>) =
        (0..d.n_features()).partition(|&j| !is_constant(&d.features, j));
    let dropped: Vec<String> = dropped.iter().map(|&j| d.feature_names[j].clone()).collect();
    if !dropped.is_empty() {
        log::warn!("dropping constant feature columns: {}", dropped.join(", "));
    }
    let kept = d.select_features(&keep);
    let (means, stds) = column_stats(&kept.features);
    Ok((apply_standardization(&kept, &means, &stds)?, dropped))
}

/// Applies `(x - mean) / std` columnwise with externally supplied statistics.
pub fn apply_standardization(d: &Dataset, means: &[f64], stds: &[f64]) -> Result<Dataset> {
    check_len(d.n_features(), means.len(), "standardization means")?;
    check_len(d.n_features(), stds.len(), "standardization stds")?;
    if let Some(j) = stds.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(MtfsError::Validation(format!(
            "standard deviation for column {j} must be positive, got {}",
            stds[j]
        )));
    }
    let mut out = d.clone();
    for (j, mut col) in out.features.axis_iter_mut(Axis(1)).enumerate() {
        col.mapv_inplace(|x| (x - means[j]) / stds[j]);
    }
    out.standardized = true;
    out.column_means = means.to_vec();
    out.column_stds = stds.to_vec();
    Ok(out)
}

/// Keeps rows with `low <= rul <= high`.
pub fn filter_rul_window(d: &Dataset, low: f64, high: f64) -> Result<(Dataset, WindowReport)> {
    if !(low < high) {
        return Err(MtfsError::Validation(format!(
            "RUL window requires low < high (got {low}, {high})"
        )));
    }
    let mut keep = Vec::with_capacity(d.n_rows());
    let (mut below, mut above) = (0, 0);
    for (i, &r) in d.rul.iter().enumerate() {
        if r < low {
            below += 1;
        } else if r > high {
            above += 1;
        } else {
            keep.push(i);
        }
    }
    if keep.is_empty() {
        return Err(MtfsError::EmptyResult(format!(
            "no rows with RUL in [{low}, {high}]"
        )));
    }
    let report = WindowReport {
        kept: keep.len(),
        removed_below: below,
        removed_above: above,
    };
    Ok((d.select_rows(&keep), report))
}
