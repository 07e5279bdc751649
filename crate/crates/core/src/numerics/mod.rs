//! Tensor storage and the three layer primitives of the network:
//! convolution, ReLU and batch normalization, each with its analytic
//! backward pass, plus a finite-difference gradient checker.

mod batchnorm;
mod conv;
mod gradcheck;
mod relu;
mod scalar;
mod tensor;

pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, BatchNormCache, BatchNormParams, Mode, DEFAULT_EPSILON,
    DEFAULT_MOMENTUM,
};
pub use conv::{conv2d_backward, conv2d_forward, ConvKernel};
pub use gradcheck::{grad_check, grad_check_at, relative_error, GradCheckReport};
pub use relu::{relu_backward, relu_forward, ReluMask};
pub use scalar::Scalar;
pub use tensor::{Shape4, Tensor4};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("tensor dimensions must all be at least 1, got {shape}")]
    EmptyDimension { shape: Shape4 },
    #[error("tensor {shape} needs {expected} elements, got {actual}")]
    DataLength {
        shape: Shape4,
        expected: usize,
        actual: usize,
    },
    #[error("{context}: expected shape {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: Shape4,
        actual: Shape4,
    },
    #[error("{context}: expected {expected} channels, got {actual}")]
    ChannelMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{context}: expected length {expected}, got {actual}")]
    LengthMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("unsupported kernel {kh}x{kw} with padding {padding}")]
    InvalidKernel {
        kh: usize,
        kw: usize,
        padding: usize,
    },
    #[error("invalid batch-norm parameters: {0}")]
    InvalidBatchNorm(&'static str),
    #[error("train-mode batch norm needs at least 2 positions per channel, got {positions}")]
    DegenerateBatch { positions: usize },
    #[error("backward pass requires a train-mode cache")]
    InferCache,
    #[error("{context}: non-finite value")]
    NonFinite { context: &'static str },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
}

#[cfg(test)]
pub(crate) mod testing {
    use super::{Shape4, Tensor4};
    use rand::Rng;

    pub fn random_tensor(rng: &mut impl Rng, shape: Shape4) -> Tensor4<f64> {
        Tensor4::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0)).unwrap()
    }

    pub fn central_difference(
        values: &[f64],
        step: f64,
        mut f: impl FnMut(&[f64]) -> f64,
    ) -> Vec<f64> {
        let mut theta = values.to_vec();
        (0..values.len())
            .map(|i| {
                let orig = theta[i];
                theta[i] = orig + step;
                let up = f(&theta);
                theta[i] = orig - step;
                let down = f(&theta);
                theta[i] = orig;
                (up - down) / (2.0 * step)
            })
            .collect()
    }
}
