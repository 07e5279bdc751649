//! Non-learned comparison methods: k-means color clustering in RGB or Lab
//! with permutation matching against ground truth, and rule-based
//! multiband thresholding.

mod kmeans;
mod lab;
mod protocol;
mod threshold;

pub use kmeans::{kmeans, KmeansConfig, KmeansResult, Objective};
pub use lab::{rgb_to_lab, srgb_to_lab};
pub use protocol::{
    image_features, match_permutation, run_kmeans_baseline, BaselineOutcome, ClusterMode,
    ColorSpace, PermutationMatch,
};
pub use threshold::{multiband_threshold, Interval, ThresholdRule, ThresholdRuleSet};

use thiserror::Error;

use crate::data::DataError;
use crate::metrics::MetricsError;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("{points} points cannot form {k} clusters")]
    TooFewPoints { points: usize, k: usize },
    #[error("permutation matching supports at most 6 classes, got {0}")]
    TooManyClasses(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite feature value")]
    NonFinite,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Data(#[from] DataError),
}
