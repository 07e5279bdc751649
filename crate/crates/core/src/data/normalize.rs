use serde::{Deserialize, Serialize};

use super::{DataError, RgbImage};
use crate::numerics::{Shape4, Tensor4};

/// Linearly stretches each RGB channel so its minimum maps to 0 and its
/// maximum to 255, rounding to nearest. Constant channels are left alone.
pub fn histogram_normalize(img: &RgbImage) -> RgbImage {
    let mut lo = [u8::MAX; 3];
    let mut hi = [u8::MIN; 3];
    for px in img.pixels() {
        for c in 0..3 {
            lo[c] = lo[c].min(px[c]);
            hi[c] = hi[c].max(px[c]);
        }
    }
    let mut out = img.clone();
    for px in out.as_bytes_mut().chunks_exact_mut(3) {
        for c in 0..3 {
            if hi[c] > lo[c] {
                let span = (hi[c] - lo[c]) as f64;
                px[c] = (255.0 * (px[c] - lo[c]) as f64 / span).round() as u8;
            }
        }
    }
    out
}

/// Per-channel mean and population standard deviation of the training
/// pixels, used to standardize network inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ChannelStats {
    pub fn new(mean: Vec<f32>, std: Vec<f32>) -> Result<Self, DataError> {
        if mean.len() != std.len() || mean.is_empty() {
            return Err(DataError::InvalidConfig(format!(
                "{} means for {} deviations",
                mean.len(),
                std.len()
            )));
        }
        if let Some(channel) = std.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(DataError::DegenerateStats { channel });
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(DataError::InvalidConfig("non-finite channel mean".into()));
        }
        Ok(Self { mean, std })
    }
}

pub fn compute_channel_stats(images: &[RgbImage]) -> Result<ChannelStats, DataError> {
    if images.is_empty() {
        return Err(DataError::EmptyInput("training images"));
    }
    let mut sum = [0.0f64; 3];
    let mut count = 0u64;
    for img in images {
        for px in img.pixels() {
            for c in 0..3 {
                sum[c] += px[c] as f64;
            }
        }
        count += (img.height() * img.width()) as u64;
    }
    let mean = sum.map(|s| s / count as f64);
    let mut sq = [0.0f64; 3];
    for img in images {
        for px in img.pixels() {
            for c in 0..3 {
                sq[c] += (px[c] as f64 - mean[c]).powi(2);
            }
        }
    }
    let std = sq.map(|s| (s / count as f64).sqrt());
    if let Some(channel) = std.iter().position(|&s| s == 0.0) {
        return Err(DataError::DegenerateStats { channel });
    }
    ChannelStats::new(
        mean.iter().map(|&m| m as f32).collect(),
        std.iter().map(|&s| s as f32).collect(),
    )
}

fn standardize_into(img: &RgbImage, stats: &ChannelStats, out: &mut [f32]) {
    let scale: Vec<f32> = stats.std.iter().map(|s| 1.0 / s).collect();
    for (px, o) in img.as_bytes().chunks_exact(3).zip(out.chunks_exact_mut(3)) {
        for c in 0..3 {
            o[c] = (px[c] as f32 - stats.mean[c]) * scale[c];
        }
    }
}

fn check_stats(stats: &ChannelStats) -> Result<(), DataError> {
    if stats.mean.len() != 3 {
        return Err(DataError::InvalidConfig(format!(
            "RGB standardization needs 3 channel statistics, got {}",
            stats.mean.len()
        )));
    }
    Ok(())
}

/// `(x - mean) / std` per channel, as a single-sample tensor.
pub fn standardize(img: &RgbImage, stats: &ChannelStats) -> Result<Tensor4<f32>, DataError> {
    standardize_batch(std::slice::from_ref(img), stats)
}

/// Standardizes equally sized images into one batch tensor.
pub fn standardize_batch<'a, I>(images: I, stats: &ChannelStats) -> Result<Tensor4<f32>, DataError>
where
    I: IntoIterator<Item = &'a RgbImage>,
{
    check_stats(stats)?;
    let images: Vec<&RgbImage> = images.into_iter().collect();
    let first = images.first().ok_or(DataError::EmptyInput("batch"))?;
    let (h, w) = first.dims();
    let per = h * w * 3;
    let mut data = vec![0.0f32; per * images.len()];
    for (img, out) in images.iter().zip(data.chunks_exact_mut(per)) {
        if img.dims() != (h, w) {
            return Err(DataError::Dimensions(format!(
                "batch mixes {h}x{w} and {}x{} images",
                img.height(),
                img.width()
            )));
        }
        standardize_into(img, stats, out);
    }
    Ok(Tensor4::from_vec(Shape4::new(images.len(), h, w, 3), data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stretches_channel_range() {
        let mut img = RgbImage::filled(1, 3, [0, 0, 0]).unwrap();
        img.set(0, 0, [10, 0, 7]);
        img.set(0, 1, [200, 255, 7]);
        img.set(0, 2, [105, 128, 7]);
        let out = histogram_normalize(&img);
        // 255 * 95 / 190 = 127.5 rounds to 128.
        assert_eq!(out.get(0, 0)[0], 0);
        assert_eq!(out.get(0, 1)[0], 255);
        assert_eq!(out.get(0, 2)[0], 128);
        // Green already spans [0, 255]; blue is constant.
        for x in 0..3 {
            assert_eq!(out.get(0, x)[1], img.get(0, x)[1]);
            assert_eq!(out.get(0, x)[2], 7);
        }
    }

    #[test]
    fn nearest_rounding_example() {
        // 255 * (105 - 10) / (200 - 10) = 127.5; with 201 as the maximum it
        // is 126.8 and rounds to 127.
        let mut img = RgbImage::filled(1, 3, [0, 0, 0]).unwrap();
        img.set(0, 0, [10, 0, 0]);
        img.set(0, 1, [201, 0, 0]);
        img.set(0, 2, [105, 0, 0]);
        assert_eq!(histogram_normalize(&img).get(0, 2)[0], 127);
    }

    #[test]
    fn uniform_gray_has_no_spread() {
        let img = RgbImage::filled(4, 4, [128, 128, 128]).unwrap();
        assert!(matches!(
            compute_channel_stats(&[img]),
            Err(DataError::DegenerateStats { channel: 0 })
        ));
    }

    #[test]
    fn two_pixel_population_stats() {
        let mut img = RgbImage::filled(1, 2, [0, 10, 20]).unwrap();
        img.set(0, 1, [255, 30, 40]);
        let s = compute_channel_stats(&[img]).unwrap();
        assert_eq!(s.mean[0], 127.5);
        assert_eq!(s.std[0], 127.5);
        assert_eq!(s.std[1], 10.0);
    }

    #[test]
    fn standardized_training_set_is_unit() {
        let mut imgs = Vec::new();
        for k in 0..3u32 {
            let mut img = RgbImage::filled(8, 9, [0, 0, 0]).unwrap();
            for y in 0..8 {
                for x in 0..9 {
                    let v = (y as u32 * 31 + x as u32 * 17 + k * 53) % 256;
                    img.set(y, x, [v as u8, (255 - v) as u8, ((v * 7) % 256) as u8]);
                }
            }
            imgs.push(img);
        }
        let stats = compute_channel_stats(&imgs).unwrap();
        let t = standardize_batch(&imgs, &stats).unwrap();
        let n = t.shape().positions() as f64;
        for c in 0..3 {
            let vals: Vec<f64> = t
                .data()
                .iter()
                .skip(c)
                .step_by(3)
                .map(|&v| v as f64)
                .collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }
}
