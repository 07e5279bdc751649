//! Image and label I/O, color coding, input normalization, geometric and
//! color augmentation, patch sampling, and a synthetic trichrome-like
//! generator.

mod color;
mod dataset;
mod image;
mod labels;
mod normalize;
mod patches;
mod synth;
mod transform;

pub use self::image::{decode_image, encode_image, png_bytes, RgbImage};
pub use color::{color_adjust, ColorChannel, ColorLimits};
pub use dataset::{
    list_pairs, list_pngs, load_dataset, write_dataset, Dataset, PairPaths, IMAGES_DIR, LABELS_DIR,
};
pub use labels::{
    labelmap_from_colors, labelmap_to_colors, ColorEntry, Colormap, LabelMap, BACKGROUND, FIBROSIS,
    MYOCYTE,
};
pub use normalize::{
    compute_channel_stats, histogram_normalize, standardize, standardize_batch, ChannelStats,
};
pub use patches::{
    build_balanced_training_set, build_training_set, class_fractions, class_proportion_sd,
    color_augment, exclusion_split, sample_patches, AugmentPlan, BuildReport, Patch, PatchSet,
    BALANCE_TARGET, BALANCE_TOLERANCE,
};
pub use synth::{synth_generate, Palette, SynthParams, MIN_SYNTH_DIM};
pub use transform::{apply_transform, transform_labels, Transform, TransformKind};

use std::path::PathBuf;

use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: unsupported image format: {detail}")]
    UnsupportedFormat { path: PathBuf, detail: String },
    #[error("{path}: expected 3 color channels, got {channels}")]
    ChannelCount { path: PathBuf, channels: usize },
    #[error("{path}: corrupt or truncated image: {detail}")]
    CorruptImage { path: PathBuf, detail: String },
    #[error("PNG encoding failed: {0}")]
    Encode(String),
    #[error("dimension error: {0}")]
    Dimensions(String),
    #[error("color {color:?} at (y={y}, x={x}) is not in the colormap")]
    UnmappedColor { color: [u8; 3], y: usize, x: usize },
    #[error("class {class} has no color in a {classes}-entry colormap")]
    ClassOutOfRange { class: u8, classes: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("channel {channel} has zero spread; cannot standardize")]
    DegenerateStats { channel: usize },
    #[error("empty {0}")]
    EmptyInput(&'static str),
    #[error("invalid transform parameters: {0}")]
    InvalidTransform(String),
    #[error("patch size {size} exceeds image dims {h}x{w}")]
    PatchTooLarge { size: usize, h: usize, w: usize },
    #[error("{available} raw patches cannot cover {required} discards")]
    NotEnoughPatches { available: usize, required: usize },
    #[error("class balance target unreachable: best fractions {achieved:?}")]
    BalanceInfeasible { achieved: Vec<f64> },
    #[error("{path}: {detail}")]
    Layout { path: PathBuf, detail: String },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
