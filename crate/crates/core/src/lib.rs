//! Joint multi-task feature selection for remaining-useful-life (RUL)
//! regression and failure-type classification.
//!
//! The crate fits `theta * L_r + L_c + lambda * L_n` (least squares +
//! logistic negative log-likelihood + a per-feature coupling penalty),
//! sweeps `lambda` to trace the selected feature sets, estimates
//! competing-risk cumulative incidence curves, trains linear SVM/SVR
//! predictors on the selected features and evaluates the whole pipeline by
//! k-fold cross-validation.

pub mod cif;
pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod objective;
pub mod params;
pub mod path;
pub mod predictors;
pub mod solver;

pub use error::{MtfsError, Result};
pub use objective::{sigmoid, Hyperparams, LossBreakdown, PenaltyMode};
pub use params::ModelParams;
