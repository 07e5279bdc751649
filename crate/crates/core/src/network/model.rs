use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ArchManifest, NetworkError, ParamCount};
use crate::numerics::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, relu_backward,
    relu_forward, BatchNormCache, BatchNormParams, ConvKernel, Mode, ReluMask, Scalar, Shape4,
    Tensor4,
};

/// Standard deviation of a unit normal truncated to `[-2, 2]`.
///
/// Dividing the target deviation by this before truncating keeps the spread
/// of the sampled weights at `sqrt(2 / fan_in)`.
pub const TRUNCATED_STD_RATIO: f64 = 0.879_625_661_034_239_8;

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T = f32> {
    pub conv: ConvKernel<T>,
    pub bn: BatchNormParams<T>,
}

/// The fully convolutional segmentation network: a stack of
/// conv -> ReLU -> batch-norm blocks with no pooling, upsampling or biases.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f32> {
    manifest: ArchManifest,
    layers: Vec<Layer<T>>,
}

/// Per-layer state kept by a train-mode forward pass.
#[derive(Clone, Debug)]
pub struct LayerCache<T> {
    pub input: Tensor4<T>,
    pub mask: ReluMask,
    pub bn: BatchNormCache<T>,
}

#[derive(Clone, Debug)]
pub struct ForwardCache<T = f32> {
    pub layers: Vec<LayerCache<T>>,
    output_shape: Shape4,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn output_shape(&self) -> Shape4 {
        self.output_shape
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradients<T> {
    pub weights: Tensor4<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T = f32> {
    pub layers: Vec<LayerGradients<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient blocks in the same order as [`Network::param_blocks_mut`].
    pub fn blocks(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.data(), &l.gamma[..], &l.beta[..]])
            .collect()
    }
}

fn sample_weights(rng: &mut ChaCha8Rng, count: usize, std: f64) -> Vec<f64> {
    let scale = std / TRUNCATED_STD_RATIO;
    (0..count)
        .map(|_| loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= 2.0 {
                break z * scale;
            }
        })
        .collect()
}

impl<T: Scalar> Network<T> {
    /// He-initialized network: zero-mean normal weights truncated at two
    /// standard deviations, with variance `2 / (kh * kw * c_in)`; batch norm
    /// starts as the identity.
    pub fn build(manifest: ArchManifest, seed: u64) -> Result<Self, NetworkError> {
        manifest.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(manifest.layers.len());
        for spec in &manifest.layers {
            let shape = Shape4::new(spec.kernel_h, spec.kernel_w, spec.c_in, spec.c_out);
            let std = (2.0 / spec.fan_in() as f64).sqrt();
            let data = sample_weights(&mut rng, shape.len(), std)
                .into_iter()
                .map(T::from_f64)
                .collect();
            layers.push(Layer {
                conv: ConvKernel::new(Tensor4::from_vec(shape, data)?, spec.padding)?,
                bn: BatchNormParams::identity(spec.c_out),
            });
        }
        Ok(Self { manifest, layers })
    }

    /// Assembles a network from explicit parameters, checking them against
    /// the manifest.
    pub fn from_layers(
        manifest: ArchManifest,
        layers: Vec<Layer<T>>,
    ) -> Result<Self, NetworkError> {
        manifest.validate()?;
        if layers.len() != manifest.layers.len() {
            return Err(NetworkError::InvalidManifest(format!(
                "{} parameter blocks for {} layers",
                layers.len(),
                manifest.layers.len()
            )));
        }
        for (i, (spec, layer)) in manifest.layers.iter().zip(&layers).enumerate() {
            let c = &layer.conv;
            if (c.kh(), c.kw(), c.c_in(), c.c_out(), c.padding())
                != (
                    spec.kernel_h,
                    spec.kernel_w,
                    spec.c_in,
                    spec.c_out,
                    spec.padding,
                )
            {
                return Err(NetworkError::InvalidManifest(format!(
                    "layer {} weights do not match the manifest",
                    i + 1
                )));
            }
            layer.bn.validate()?;
            if layer.bn.channels() != spec.c_out {
                return Err(NetworkError::InvalidManifest(format!(
                    "layer {} batch norm has {} channels, expected {}",
                    i + 1,
                    layer.bn.channels(),
                    spec.c_out
                )));
            }
            let finite = c.weights().all_finite()
                && [
                    &layer.bn.gamma,
                    &layer.bn.beta,
                    &layer.bn.running_mean,
                    &layer.bn.running_var,
                ]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()));
            if !finite {
                return Err(NetworkError::NonFiniteParameter { layer: i + 1 });
            }
        }
        Ok(Self { manifest, layers })
    }

    pub fn manifest(&self) -> &ArchManifest {
        &self.manifest
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn class_count(&self) -> usize {
        self.manifest.class_count
    }

    pub fn count_parameters(&self) -> ParamCount {
        self.manifest.count_parameters()
    }

    pub fn count_macs(&self, h: usize, w: usize) -> u64 {
        self.manifest.count_macs(h, w)
    }

    /// Trainable blocks in order `(weights, gamma, beta)` per layer.
    pub fn param_blocks_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let Layer { conv, bn } = l;
                [
                    conv.weights_mut().data_mut(),
                    &mut bn.gamma[..],
                    &mut bn.beta[..],
                ]
            })
            .collect()
    }

    pub fn param_blocks(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.conv.weights().data(), &l.bn.gamma[..], &l.bn.beta[..]])
            .collect()
    }

    /// Runs the whole stack. The returned logits have the input's spatial
    /// size and one channel per class. A cache is produced only in train
    /// mode.
    pub fn forward(
        &self,
        batch: &Tensor4<T>,
        mode: Mode,
    ) -> Result<(Tensor4<T>, Option<ForwardCache<T>>), NetworkError> {
        let expected = self.manifest.input_channels();
        if batch.shape().c != expected {
            return Err(NetworkError::InputChannels {
                expected,
                actual: batch.shape().c,
            });
        }
        let mut caches = Vec::new();
        let mut x: Option<Tensor4<T>> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let input = x.as_ref().unwrap_or(batch);
            let z = conv2d_forward(input, &layer.conv)?;
            let (r, mask) = relu_forward(&z);
            drop(z);
            let (y, bn_cache) = batchnorm_forward(&r, &layer.bn, mode)?;
            if !y.all_finite() {
                return Err(NetworkError::Divergence { layer: i + 1 });
            }
            let prev = x.replace(y);
            if mode == Mode::Train {
                caches.push(LayerCache {
                    input: prev.unwrap_or_else(|| batch.clone()),
                    mask,
                    bn: bn_cache,
                });
            }
        }
        let logits = x.expect("validated manifest has layers");
        let cache = (mode == Mode::Train).then(|| ForwardCache {
            layers: caches,
            output_shape: logits.shape(),
        });
        Ok((logits, cache))
    }

    /// Back-propagates `grad_logits` through a train-mode cache.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_logits: &Tensor4<T>,
    ) -> Result<Gradients<T>, NetworkError> {
        if cache.layers.len() != self.layers.len() {
            return Err(NetworkError::CacheMismatch(format!(
                "cache has {} layers, network has {}",
                cache.layers.len(),
                self.layers.len()
            )));
        }
        if grad_logits.shape() != cache.output_shape {
            return Err(NetworkError::CacheMismatch(format!(
                "gradient shape {} does not match cached output {}",
                grad_logits.shape(),
                cache.output_shape
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_logits.clone();
        for (layer, lc) in self.layers.iter().zip(&cache.layers).rev() {
            let (g_bn, gamma, beta) = batchnorm_backward(&g, &lc.bn)?;
            let g_relu = relu_backward(&g_bn, &lc.mask)?;
            drop(g_bn);
            let (g_in, weights) = conv2d_backward(&g_relu, &lc.input, &layer.conv)?;
            grads.push(LayerGradients {
                weights,
                gamma,
                beta,
            });
            g = g_in;
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    /// Folds the batch statistics recorded in a train-mode cache into each
    /// layer's running averages.
    pub fn update_running_stats(&mut self, cache: &ForwardCache<T>) {
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers) {
            layer.bn.update_running(&lc.bn.batch_mean, &lc.bn.batch_var);
        }
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            manifest: self.manifest.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    conv: l.conv.cast(),
                    bn: l.bn.cast(),
                })
                .collect(),
        }
    }
}

/// Convenience wrapper for [`Network::build`].
pub fn build_network(manifest: ArchManifest, seed: u64) -> Result<Network, NetworkError> {
    Network::build(manifest, seed)
}
