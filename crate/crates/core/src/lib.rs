//! Stratified propensity-score weighting.
//!
//! The pipeline fits a logistic propensity model inside every stratum, turns
//! the scores into ATE weights, and rescales those weights in two stages:
//! first so that both exposure arms of each stratum carry equal total weight,
//! then so that each stratum's share of the pooled pseudo-population matches
//! its share of the original cohort. Balance diagnostics, effective sample
//! sizes and effect estimates (sandwich or full-pipeline bootstrap SEs) are
//! computed on the result.
//!
//! ```
//! use stratw::{simulate::{simulate_cohort, SimConfig}, weights::{compute_weights, WeightingConfig}, design::DesignSpec};
//!
//! let cohort = simulate_cohort(&SimConfig::default()).unwrap();
//! let cfg = WeightingConfig::stratified(DesignSpec::main(&["age", "stage_IV"]));
//! let ws = compute_weights(&cohort, &cfg).unwrap();
//! let total: f64 = ws.final_weights().iter().sum();
//! assert!((total - ws.raw.iter().sum::<f64>()).abs() < 1e-8 * total);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cohort;
pub mod design;
pub mod diagnostics;
pub mod error;
pub mod estimation;
mod linalg;
pub mod propensity;
pub mod simulate;
pub mod weights;

pub use cohort::{load_csv, read_csv, write_csv, Cohort, ColumnSchema, PatientRecord};
pub use design::{build_design_matrix, DesignMatrix, DesignSpec};
pub use error::{Error, ErrorClass, Result};
pub use propensity::{fit_logistic, predict_scores, FitOptions, FitSummary, PropensityFit};
pub use weights::{compute_weights, WeightSet, WeightingConfig};
