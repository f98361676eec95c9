#![allow(dead_code)]

use mtfs::data::{standardize, Dataset};
use mtfs::objective::sigmoid;
use mtfs::ModelParams;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn names(m: usize) -> Vec<String> {
    (0..m).map(|j| format!("x{j}")).collect()
}

/// Gaussian features, linear RUL plus noise and logistic labels forced to
/// contain both classes. Returned standardized.
pub fn random_dataset(r: &mut ChaCha8Rng, n: usize, m: usize) -> Dataset {
    let x = Array2::from_shape_fn((n, m), |_| r.sample::<f64, _>(StandardNormal));
    let a: Vec<f64> = (0..m).map(|_| r.random_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..m).map(|_| r.random_range(-1.0..1.0)).collect();
    let mut rul = Array1::zeros(n);
    let mut y = vec![0u8; n];
    for i in 0..n {
        let row = x.row(i);
        let xa: f64 = row.iter().zip(&a).map(|(u, v)| u * v).sum();
        let xb: f64 = row.iter().zip(&b).map(|(u, v)| u * v).sum();
        rul[i] = 50.0 + 5.0 * xa + r.sample::<f64, _>(StandardNormal);
        y[i] = u8::from(r.random::<f64>() < sigmoid(xb));
    }
    y[0] = 0;
    y[1] = 1;
    let d = Dataset::new(x, names(m), rul, y).unwrap();
    standardize(&d).unwrap().0
}

pub fn random_params(r: &mut ChaCha8Rng, m: usize, scale: f64) -> ModelParams {
    let mut v = |_: usize| scale * r.sample::<f64, _>(StandardNormal);
    ModelParams {
        a0: 50.0 + v(0),
        a: (0..m).map(&mut v).collect(),
        b0: v(0),
        b: (0..m).map(&mut v).collect(),
    }
}

/// Marks an already-centered dataset as standardized without rescaling.
pub fn as_standardized(mut d: Dataset) -> Dataset {
    let m = d.n_features();
    d.standardized = true;
    d.column_means = vec![0.0; m];
    d.column_stds = vec![1.0; m];
    d
}
