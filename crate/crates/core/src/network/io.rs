//! Binary model files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "HSG1"                      magic
//! u32                         format version (1)
//! u32                         layer count L
//! L x (kh, kw, c_in, c_out, padding) as u32
//! u32                         normalization channel count S (0 = absent)
//! S x f32 means, S x f32 standard deviations
//! per layer: conv weights, gamma, beta, running_mean, running_var as f32
//! u32                         CRC-32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use super::{ArchManifest, Layer, LayerSpec, Network, NetworkError};
use crate::data::ChannelStats;
use crate::numerics::{BatchNormParams, ConvKernel, Shape4, Tensor4};

pub const MAGIC: &[u8; 4] = b"HSG1";
pub const FORMAT_VERSION: u32 = 1;

/// A network together with the input normalization it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedModel {
    pub network: Network,
    pub stats: Option<ChannelStats>,
}

pub fn encode_model(net: &Network, stats: Option<&ChannelStats>) -> Vec<u8> {
    let mut out = Vec::new();
    let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    let f32s = |out: &mut Vec<u8>, vs: &[f32]| {
        for v in vs {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let m = net.manifest();
    u32le(&mut out, m.layers.len());
    for l in &m.layers {
        for v in [l.kernel_h, l.kernel_w, l.c_in, l.c_out, l.padding] {
            u32le(&mut out, v);
        }
    }
    match stats {
        Some(s) => {
            u32le(&mut out, s.mean.len());
            f32s(&mut out, &s.mean);
            f32s(&mut out, &s.std);
        }
        None => u32le(&mut out, 0),
    }
    for layer in net.layers() {
        f32s(&mut out, layer.conv.weights().data());
        f32s(&mut out, &layer.bn.gamma);
        f32s(&mut out, &layer.bn.beta);
        f32s(&mut out, &layer.bn.running_mean);
        f32s(&mut out, &layer.bn.running_var);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetworkError> {
        let end = self.pos.checked_add(n).ok_or(NetworkError::Truncated)?;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or(NetworkError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, NetworkError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, NetworkError> {
        let b = self.take(n.checked_mul(4).ok_or(NetworkError::Truncated)?)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

/// Parses a model file image. Structural truncation is detected before the
/// checksum so a short file reports [`NetworkError::Truncated`].
pub fn decode_model(bytes: &[u8]) -> Result<SavedModel, NetworkError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(NetworkError::BadMagic);
    }
    let version = r.u32()? as u32;
    if version != FORMAT_VERSION {
        return Err(NetworkError::UnsupportedVersion(version));
    }
    let count = r.u32()?;
    if count > bytes.len() / 20 {
        return Err(NetworkError::Truncated);
    }
    let mut specs = Vec::with_capacity(count);
    for _ in 0..count {
        specs.push(LayerSpec {
            kernel_h: r.u32()?,
            kernel_w: r.u32()?,
            c_in: r.u32()?,
            c_out: r.u32()?,
            padding: r.u32()?,
        });
    }
    let stats_len = r.u32()?;
    let stats_raw = if stats_len > 0 {
        Some((r.f32s(stats_len)?, r.f32s(stats_len)?))
    } else {
        None
    };
    let mut blocks = Vec::with_capacity(count);
    for s in &specs {
        let n = (s.kernel_h as u64 * s.kernel_w as u64 * s.c_in as u64 * s.c_out as u64) as usize;
        let weights = r.f32s(n)?;
        let gamma = r.f32s(s.c_out)?;
        let beta = r.f32s(s.c_out)?;
        let mean = r.f32s(s.c_out)?;
        let var = r.f32s(s.c_out)?;
        blocks.push((weights, gamma, beta, mean, var));
    }
    let body_end = r.pos;
    let stored = r.u32()? as u32;
    if r.pos != bytes.len() {
        return Err(NetworkError::TrailingBytes(bytes.len() - r.pos));
    }
    if crc32fast::hash(&bytes[..body_end]) != stored {
        return Err(NetworkError::ChecksumMismatch);
    }

    let manifest = ArchManifest {
        class_count: specs.last().map_or(0, |l| l.c_out),
        layers: specs.clone(),
    };
    manifest.validate()?;
    let layers = specs
        .iter()
        .zip(blocks)
        .map(|(s, (weights, gamma, beta, running_mean, running_var))| {
            let shape = Shape4::new(s.kernel_h, s.kernel_w, s.c_in, s.c_out);
            Ok(Layer {
                conv: ConvKernel::new(Tensor4::from_vec(shape, weights)?, s.padding)?,
                bn: BatchNormParams {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    ..BatchNormParams::identity(0)
                },
            })
        })
        .collect::<Result<Vec<_>, NetworkError>>()?;
    let network = Network::from_layers(manifest, layers)?;
    let stats = match stats_raw {
        Some((mean, std)) => Some(ChannelStats::new(mean, std)?),
        None => None,
    };
    Ok(SavedModel { network, stats })
}

pub fn save_model_with_stats(
    net: &Network,
    stats: Option<&ChannelStats>,
    path: &Path,
) -> Result<(), NetworkError> {
    fs::write(path, encode_model(net, stats)).map_err(|e| NetworkError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn save_model(net: &Network, path: &Path) -> Result<(), NetworkError> {
    save_model_with_stats(net, None, path)
}

pub fn load_model_with_stats(path: &Path) -> Result<SavedModel, NetworkError> {
    let bytes = fs::read(path).map_err(|e| NetworkError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    decode_model(&bytes)
}

pub fn load_model(path: &Path) -> Result<Network, NetworkError> {
    load_model_with_stats(path).map(|m| m.network)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::build_network;

    fn trained_looking() -> Network {
        let mut net = build_network(ArchManifest::default(), 99).unwrap();
        for (i, layer) in net.layers_mut().iter_mut().enumerate() {
            for (j, g) in layer.bn.gamma.iter_mut().enumerate() {
                *g = 1.0 + (i * 7 + j) as f32 * 1e-3;
            }
            for (j, m) in layer.bn.running_mean.iter_mut().enumerate() {
                *m = (i + j) as f32 * 0.01;
            }
        }
        net
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let net = trained_looking();
        let stats = ChannelStats::new(vec![180.5, 90.25, 120.0], vec![40.0, 55.5, 30.125]).unwrap();
        let bytes = encode_model(&net, Some(&stats));
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back.network, net);
        assert_eq!(back.stats, Some(stats.clone()));
        assert_eq!(encode_model(&back.network, back.stats.as_ref()), bytes);
    }

    #[test]
    fn file_size_follows_from_counts() {
        let net = trained_looking();
        let bytes = encode_model(&net, None);
        // (298,005 trainable + 1,164 running) floats, 12-byte preamble,
        // 11 * 20 bytes of manifest, 4-byte stats count, 4-byte checksum.
        assert_eq!(bytes.len(), (298_005 + 1_164) * 4 + 12 + 220 + 4 + 4);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.hsg");
        let net = trained_looking();
        save_model(&net, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), net);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode_model(&trained_looking(), None);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(
            decode_model(&bytes),
            Err(NetworkError::ChecksumMismatch)
        ));
    }

    #[test]
    fn header_errors_are_distinct() {
        let good = encode_model(&trained_looking(), None);
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            decode_model(&bad_magic),
            Err(NetworkError::BadMagic)
        ));
        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(matches!(
            decode_model(&bad_version),
            Err(NetworkError::UnsupportedVersion(9))
        ));
        for cut in [0, 3, 10, 100, good.len() / 2, good.len() - 1] {
            assert!(
                matches!(decode_model(&good[..cut]), Err(NetworkError::Truncated)),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn broken_chaining_fails_validation() {
        // Layer 2 claims 32 input channels; weights sized to match so the
        // file is structurally complete with a valid checksum.
        let mut m = ArchManifest::default();
        m.layers[1].c_in = 32;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(m.layers.len() as u32).to_le_bytes());
        for l in &m.layers {
            for v in [l.kernel_h, l.kernel_w, l.c_in, l.c_out, l.padding] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
        }
        out.extend_from_slice(&0u32.to_le_bytes());
        for l in &m.layers {
            let n = l.conv_weights() as usize + 4 * l.c_out;
            out.extend(std::iter::repeat(0u8).take(n * 4));
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            decode_model(&out),
            Err(NetworkError::InvalidManifest(_))
        ));
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load_model(Path::new("/nonexistent/model.hsg")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/model.hsg"));
    }
}
