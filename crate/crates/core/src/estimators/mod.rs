//! Statistical primitives behind the audit battery.
//!
//! Everything here is a pure function of (data, seed): bootstrap replicates,
//! permutations and CV folds derive per-unit RNG substreams up front, so
//! results are identical regardless of scheduling.

mod bootstrap;
mod cmi;
mod exact;
mod gbdt;
mod isotonic;

pub use bootstrap::{
    bootstrap_ci, grouped_local_permutation_pvalue, local_permutation_pvalue, singleton_units,
};
pub use cmi::{knn_cmi, plugin_cmi};
pub use exact::{binomial_one_sided, fisher_exact_one_sided};
pub use gbdt::{
    gbdt_grouped_cv_logloss, BaggedTreeRegressor, CvOutcome, GbdtClassifier, GbdtConfig,
};
pub use isotonic::{isotonic_fit, IsotonicFit};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("input length mismatch")]
    LengthMismatch,
    #[error("need more than k={k} samples, got n={n}")]
    NotEnoughSamples { n: usize, k: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("contingency table is all zero")]
    AllZeroTable,
    #[error("empty input")]
    EmptyInput,
    #[error(
        "bootstrap statistic failed after {attempts} attempts on replicate {replicate}: {reason}"
    )]
    StatisticFailed {
        replicate: usize,
        attempts: usize,
        reason: String,
    },
    #[error("class '{class}' is absent from the training split of fold {fold}")]
    ClassAbsentFromTrainingFold { class: String, fold: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// A conditional-mutual-information estimate in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CmiEstimate {
    pub value: f64,
    pub k: usize,
    pub n: usize,
}

/// A percentile bootstrap confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCI {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub replicates: usize,
}

/// Counts for a 2x2 table: rows are the two belief bins, columns the two
/// actions of the pair under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable2x2 {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyTable2x2 {
    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }
}
