use serde::{Deserialize, Serialize};

use super::NetworkError;

/// One convolution -> ReLU -> batch-norm block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub padding: usize,
}

impl LayerSpec {
    pub const fn conv3x3(c_in: usize, c_out: usize) -> Self {
        Self {
            kernel_h: 3,
            kernel_w: 3,
            c_in,
            c_out,
            padding: 1,
        }
    }

    pub const fn conv1x1(c_in: usize, c_out: usize) -> Self {
        Self {
            kernel_h: 1,
            kernel_w: 1,
            c_in,
            c_out,
            padding: 0,
        }
    }

    /// Convolution weights in this layer, `kh * kw * c_in * c_out`.
    pub const fn conv_weights(&self) -> u64 {
        (self.kernel_h * self.kernel_w * self.c_in * self.c_out) as u64
    }

    /// Fan-in used by He initialization, `kh * kw * c_in`.
    pub const fn fan_in(&self) -> usize {
        self.kernel_h * self.kernel_w * self.c_in
    }
}

/// Trainable parameter totals. Conv weights and batch-norm scale/shift
/// are reported separately because they are quoted separately.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub conv_weights: u64,
    pub bn_params: u64,
    pub total: u64,
}

/// Layer list of the network. Every layer is followed by ReLU and then
/// batch normalization.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchManifest {
    pub layers: Vec<LayerSpec>,
    pub class_count: usize,
}

pub const FEATURE_CHANNELS: usize = 64;
pub const INPUT_CHANNELS: usize = 3;
pub const DEFAULT_CLASSES: usize = 3;

impl Default for ArchManifest {
    /// Nine 3x3 layers with 64 channels, then two 1x1 layers with 3.
    fn default() -> Self {
        Self::with_classes(DEFAULT_CLASSES)
    }
}

impl ArchManifest {
    pub fn with_classes(classes: usize) -> Self {
        let mut layers = vec![LayerSpec::conv3x3(INPUT_CHANNELS, FEATURE_CHANNELS)];
        layers.extend((0..8).map(|_| LayerSpec::conv3x3(FEATURE_CHANNELS, FEATURE_CHANNELS)));
        layers.push(LayerSpec::conv1x1(FEATURE_CHANNELS, classes));
        layers.push(LayerSpec::conv1x1(classes, classes));
        Self {
            layers,
            class_count: classes,
        }
    }

    /// Inserts `extra` 3x3 64->64 layers ahead of the 1x1 tail.
    pub fn with_extra_layers(mut self, extra: usize) -> Self {
        let at = self
            .layers
            .iter()
            .rposition(|l| l.kernel_h == 3 && l.c_out == FEATURE_CHANNELS)
            .map_or(0, |i| i + 1);
        for _ in 0..extra {
            self.layers
                .insert(at, LayerSpec::conv3x3(FEATURE_CHANNELS, FEATURE_CHANNELS));
        }
        self
    }

    pub fn input_channels(&self) -> usize {
        self.layers.first().map_or(0, |l| l.c_in)
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let invalid = |reason: String| Err(NetworkError::InvalidManifest(reason));
        let Some(last) = self.layers.last() else {
            return invalid("manifest has no layers".into());
        };
        for (i, l) in self.layers.iter().enumerate() {
            let k = l.kernel_h;
            if k != l.kernel_w || !(k == 1 || k == 3) || l.padding != (k - 1) / 2 {
                return invalid(format!(
                    "layer {}: kernel {}x{} with padding {} does not preserve size",
                    i + 1,
                    l.kernel_h,
                    l.kernel_w,
                    l.padding
                ));
            }
            if l.c_in == 0 || l.c_out == 0 {
                return invalid(format!("layer {}: zero channels", i + 1));
            }
            if let Some(next) = self.layers.get(i + 1) {
                if next.c_in != l.c_out {
                    return invalid(format!(
                        "layer {} outputs {} channels but layer {} expects {}",
                        i + 1,
                        l.c_out,
                        i + 2,
                        next.c_in
                    ));
                }
            }
        }
        if self.class_count < 2 || last.c_out != self.class_count {
            return invalid(format!(
                "final layer has {} channels for {} classes",
                last.c_out, self.class_count
            ));
        }
        Ok(())
    }

    pub fn count_parameters(&self) -> ParamCount {
        let conv_weights = self.layers.iter().map(LayerSpec::conv_weights).sum();
        let bn_params = self.layers.iter().map(|l| 2 * l.c_out as u64).sum();
        ParamCount {
            conv_weights,
            bn_params,
            total: conv_weights + bn_params,
        }
    }

    /// Convolution multiply-accumulates for an `h x w` input. Element-wise
    /// ReLU and batch-norm work is not counted.
    pub fn count_macs(&self, h: usize, w: usize) -> u64 {
        let per_pixel: u64 = self.layers.iter().map(LayerSpec::conv_weights).sum();
        per_pixel * h as u64 * w as u64
    }
}
