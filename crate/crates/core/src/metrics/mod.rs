//! Confusion matrices, per-class overlap scores and their aggregation over a
//! test set, class-area quantification and Welch's unequal-variance t-test.

mod confusion;
mod report;
mod scores;
mod welch;

pub use confusion::{confusion, ConfusionMatrix};
pub use report::{pretty_table, write_image_csv, write_score_csv, ScoreRow};
pub use scores::{
    aggregate, class_area_fractions, dsc_from_iou, dsc_per_class, iou_per_class, score_image,
    score_set, ImageScores, ScoreTable,
};
pub use welch::{
    ln_gamma, regularized_incomplete_beta, student_t_two_sided, welch_ttest, WelchResult,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction is {pred:?} but truth is {truth:?}")]
    DimensionMismatch {
        pred: (usize, usize),
        truth: (usize, usize),
    },
    #[error("class {class} at pixel {pixel} is out of range for {classes} classes")]
    ClassOutOfRange {
        class: u8,
        pixel: usize,
        classes: usize,
    },
    #[error("{0} entries cannot form a square confusion matrix")]
    BadCounts(usize),
    #[error("image {index} has {actual} class scores, expected {expected}")]
    ClassCount {
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error("nothing to aggregate")]
    Empty,
    #[error("Welch test needs at least 2 samples per group, got {0} and {1}")]
    TooFewSamples(usize, usize),
    #[error("both groups have zero variance")]
    DegenerateSamples,
    #[error("non-finite sample value")]
    NonFinite,
    #[error("{0} predictions for {1} truths")]
    SetMismatch(usize, usize),
    #[error("CSV output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("output failed: {0}")]
    Io(#[from] std::io::Error),
}
