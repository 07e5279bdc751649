//! Per-pixel segmentation of trichrome-stained tissue with a small fully
//! convolutional network, plus the data pipeline, scoring and color
//! clustering baseline around it.

pub mod baselines;
pub mod data;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod numerics;
pub mod optim;
pub mod trainer;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
