//! The 11-layer pooling-free segmentation network: architecture manifest,
//! initialization, whole-stack forward/backward, cost accounting and the
//! binary model format.

mod io;
mod manifest;
mod model;

pub use io::{
    decode_model, encode_model, load_model, load_model_with_stats, save_model,
    save_model_with_stats, SavedModel, FORMAT_VERSION, MAGIC,
};
pub use manifest::{
    ArchManifest, LayerSpec, ParamCount, DEFAULT_CLASSES, FEATURE_CHANNELS, INPUT_CHANNELS,
};
pub use model::{
    build_network, ForwardCache, Gradients, Layer, LayerCache, LayerGradients, Network,
    TRUNCATED_STD_RATIO,
};

use std::path::PathBuf;

use thiserror::Error;

use crate::data::DataError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid architecture: {0}")]
    InvalidManifest(String),
    #[error("network expects {expected} input channels, got {actual}")]
    InputChannels { expected: usize, actual: usize },
    #[error("non-finite activation after layer {layer}")]
    Divergence { layer: usize },
    #[error("non-finite parameter in layer {layer}")]
    NonFiniteParameter { layer: usize },
    #[error("forward cache does not match: {0}")]
    CacheMismatch(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("model file: bad magic")]
    BadMagic,
    #[error("model file: unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("model file: truncated")]
    Truncated,
    #[error("model file: {0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("model file: checksum mismatch")]
    ChecksumMismatch,
    #[error("model file: invalid input normalization: {0}")]
    Stats(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
