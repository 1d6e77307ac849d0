//! Embeddings for numerical features in tabular deep learning.
//!
//! The crate is organised bottom-up:
//!
//! - [`binning`]: per-feature bin boundaries from quantiles or from a greedy single-feature tree.
//! - [`encoding`]: non-learned scalar encodings (piecewise linear, binary, one-blob) and the
//!   periodic map with its gradients.
//! - [`nn`]: a small reverse-mode layer set, per-feature embedding modules and the MLP backbone.
//! - [`train`]: preprocessing, AdamW, the early-stopped training loop and random search.
//! - [`data`]: dataset loading, splitting, one-hot encoding and a synthetic tree-based task.
//! - [`eval`]: metrics, multi-seed summaries and prediction-averaging ensembles.
//! - [`experiment`]: glue that turns a dataset plus configuration into trained runs.
//!
//! All numerics are `f64`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod binning;
pub mod data;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod train;

use serde::{Deserialize, Serialize};

pub use error::{Error, Result};

/// Learning problem kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    BinClass,
    MultiClass,
}

impl Task {
    pub fn is_classification(self) -> bool {
        !matches!(self, Task::Regression)
    }

    /// Whether larger values of the task metric are better (accuracy) or worse (RMSE).
    pub fn higher_is_better(self) -> bool {
        self.is_classification()
    }

    pub fn metric_name(self) -> &'static str {
        if self.is_classification() {
            "accuracy"
        } else {
            "rmse"
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "regression" => Ok(Task::Regression),
            "binclass" => Ok(Task::BinClass),
            "multiclass" => Ok(Task::MultiClass),
            other => Err(Error::InvalidArgument(format!("unknown task `{other}`"))),
        }
    }
}
