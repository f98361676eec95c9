use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, EventType};
use crate::error::{MtfsError, Result};
use crate::params::ModelParams;
use crate::sigmoid;

/// Recipe for a synthetic dataset whose two tasks share one planted support.
///
/// Coefficient magnitudes on the support are drawn uniformly from the given
/// ranges with random signs, independently per task, so a feature can be
/// strong for one task and weak for the other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n: usize,
    pub m: usize,
    pub k_shared: usize,
    pub noise_std: f64,
    pub seed: u64,
    /// AR(1) correlation between neighbouring feature columns, in `[0, 1)`.
    pub correlation: Option<f64>,
    pub a0: f64,
    pub b0: f64,
    pub reg_coef_range: (f64, f64),
    pub cls_coef_range: (f64, f64),
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 500,
            m: 50,
            k_shared: 8,
            noise_std: 0.5,
            seed: 0,
            correlation: None,
            a0: 100.0,
            b0: 0.0,
            reg_coef_range: (0.05, 1.0),
            cls_coef_range: (0.1, 1.0),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(MtfsError::Validation(msg));
        if self.n == 0 || self.m == 0 {
            return fail(format!("n and m must be positive (n={}, m={})", self.n, self.m));
        }
        if self.k_shared > self.m {
            return fail(format!(
                "k_shared ({}) cannot exceed m ({})",
                self.k_shared, self.m
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return fail(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        if let Some(rho) = self.correlation {
            if !(0.0..1.0).contains(&rho) {
                return fail(format!("correlation must lie in [0, 1), got {rho}"));
            }
        }
        for (name, (lo, hi)) in [
            ("reg_coef_range", self.reg_coef_range),
            ("cls_coef_range", self.cls_coef_range),
        ] {
            if !(0.0 <= lo && lo <= hi && hi.is_finite()) {
                return fail(format!("{name} must satisfy 0 <= lo <= hi, got ({lo}, {hi})"));
            }
        }
        Ok(())
    }
}

fn signed_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    let mag = if hi > lo { rng.random_range(lo..hi) } else { lo };
    if rng.random_bool(0.5) {
        mag
    } else {
        -mag
    }
}

/// Draws a dataset and the parameters that generated it.
///
/// Features are standard normal (optionally AR(1)-correlated across
/// columns), `rul = X a + a0 + noise`, `failure_type ~ Bernoulli(sigmoid(X b + b0))`.
/// Each row also gets random `car_kind` (`G`/`NG`) and `wheel_size`
/// (`36`/`N36`) strata and event columns mirroring the targets.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(Dataset, ModelParams)> {
    spec.validate()?;
    let SynthSpec { n, m, .. } = *spec;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut support = sample(&mut rng, m, spec.k_shared).into_vec();
    support.sort_unstable();
    let mut truth = ModelParams::zeros(m);
    truth.a0 = spec.a0;
    truth.b0 = spec.b0;
    for &j in &support {
        truth.a[j] = signed_uniform(&mut rng, spec.reg_coef_range);
        truth.b[j] = signed_uniform(&mut rng, spec.cls_coef_range);
    }

    let rho = spec.correlation.unwrap_or(0.0);
    let innov = (1.0 - rho * rho).sqrt();
    let mut x = Array2::<f64>::zeros((n, m));
    for i in 0..n {
        let mut prev = 0.0;
        for j in 0..m {
            let z: f64 = StandardNormal.sample(&mut rng);
            let v = if j == 0 { z } else { rho * prev + innov * z };
            x[[i, j]] = v;
            prev = v;
        }
    }

    let reg_mean = x.dot(&truth.a) + truth.a0;
    let cls_eta = x.dot(&truth.b) + truth.b0;
    let mut rul = Array1::zeros(n);
    let mut failure_type = Vec::with_capacity(n);
    let mut car_kind = Vec::with_capacity(n);
    let mut wheel_size = Vec::with_capacity(n);
    for i in 0..n {
        let eps: f64 = StandardNormal.sample(&mut rng);
        rul[i] = if spec.noise_std > 0.0 {
            reg_mean[i] + spec.noise_std * eps
        } else {
            reg_mean[i]
        };
        let u: f64 = rng.random();
        failure_type.push(u8::from(u < sigmoid(cls_eta[i])));
        car_kind.push(if rng.random_bool(0.5) { "G" } else { "NG" }.to_string());
        wheel_size.push(if rng.random_bool(0.5) { "36" } else { "N36" }.to_string());
    }

    let names = (1..=m).map(|j| format!("f{j}")).collect();
    let mut d = Dataset::new(x, names, rul, failure_type)?;
    d.strata.insert("car_kind".into(), car_kind);
    d.strata.insert("wheel_size".into(), wheel_size);
    if d.rul.iter().all(|&r| r > 0.0) {
        d.event_time = Some(d.rul.to_vec());
        d.event_type = Some(
            d.failure_type
                .iter()
                .map(|&y| if y == 1 { EventType::N } else { EventType::T })
                .collect(),
        );
    }
    Ok((d, truth))
}
