use ndarray::Array1;
use serde::{Deserialize, Serialize};

/// Coefficients of both tasks, grouped per feature: feature `j` owns the
/// block `(a[j], b[j])`. Intercepts are kept outside the blocks so they are
/// never penalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub a0: f64,
    pub a: Array1<f64>,
    pub b0: f64,
    pub b: Array1<f64>,
}

impl ModelParams {
    pub fn zeros(m: usize) -> Self {
        Self {
            a0: 0.0,
            a: Array1::zeros(m),
            b0: 0.0,
            b: Array1::zeros(m),
        }
    }

    pub fn n_features(&self) -> usize {
        self.a.len()
    }

    /// Total number of scalar parameters, intercepts included.
    pub fn n_params(&self) -> usize {
        2 + self.a.len() + self.b.len()
    }

    pub fn group_norm(&self, j: usize) -> f64 {
        self.a[j].hypot(self.b[j])
    }

    /// Indices of features whose coefficient block is not exactly zero.
    pub fn active_groups(&self) -> Vec<usize> {
        (0..self.n_features())
            .filter(|&j| self.a[j] != 0.0 || self.b[j] != 0.0)
            .collect()
    }

    /// `self + alpha * other`, elementwise over every parameter.
    pub fn axpy(&self, alpha: f64, other: &ModelParams) -> ModelParams {
        ModelParams {
            a0: self.a0 + alpha * other.a0,
            a: &self.a + &(&other.a * alpha),
            b0: self.b0 + alpha * other.b0,
            b: &self.b + &(&other.b * alpha),
        }
    }

    pub fn dot(&self, other: &ModelParams) -> f64 {
        self.a0 * other.a0 + self.a.dot(&other.a) + self.b0 * other.b0 + self.b.dot(&other.b)
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }

    /// Flat iteration order: `a0, a[..], b0, b[..]`.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.a0)
            .chain(self.a.iter().copied())
            .chain(std::iter::once(self.b0))
            .chain(self.b.iter().copied())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.iter().collect()
    }

    /// Inverse of [`ModelParams::to_vec`] for `m` features.
    pub fn from_slice(values: &[f64], m: usize) -> Option<ModelParams> {
        if values.len() != 2 * m + 2 {
            return None;
        }
        Some(ModelParams {
            a0: values[0],
            a: Array1::from(values[1..=m].to_vec()),
            b0: values[m + 1],
            b: Array1::from(values[m + 2..].to_vec()),
        })
    }
}
