//! Cascade deep forest built from weighted second-order boosted trees.
//!
//! The crate is organised bottom-up:
//!
//! * [`dataio`]: datasets, CSV I/O, fold plans, class weights, synthetic data.
//! * [`sketch`]: mergeable weighted quantile summaries that propose split thresholds.
//! * [`mart`]: boosted regression trees on the weighted logistic objective.
//! * [`metrics`]: AUC, F1, KS, recall at an interrupt rate, PR curves.
//! * [`scheduler`]: DAG execution on a bounded worker pool with checkpointed resume.
//! * [`cascade`]: feature selection and layer-wise stacking with out-of-fold class vectors.

pub mod cascade;
pub mod dataio;
pub mod error;
pub mod mart;
pub mod metrics;
pub mod scheduler;
pub mod sketch;

mod seed;

pub use error::{Error, Result};
