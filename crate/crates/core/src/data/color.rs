use serde::{Deserialize, Serialize};

use super::RgbImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorChannel {
    Red,
    Blue,
}

impl ColorChannel {
    fn index(self) -> usize {
        match self {
            ColorChannel::Red => 0,
            ColorChannel::Blue => 2,
        }
    }
}

/// Contrast gain and offset reached at degree 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColorLimits {
    pub gain: f64,
    pub offset: f64,
}

impl Default for ColorLimits {
    fn default() -> Self {
        Self {
            gain: 1.0,
            offset: 40.0,
        }
    }
}

/// Remaps one channel by `v -> clamp(round(m (v - 128) + 128 + b))`, with
/// `m = 1 + d (gain - 1)` and `b = d * offset`. `degree` is clamped to [0, 1].
pub fn color_adjust(
    img: &RgbImage,
    channel: ColorChannel,
    degree: f64,
    limits: &ColorLimits,
) -> RgbImage {
    let d = if degree.is_nan() {
        0.0
    } else {
        degree.clamp(0.0, 1.0)
    };
    let m = 1.0 + d * (limits.gain - 1.0);
    let b = d * limits.offset;
    let lut: Vec<u8> = (0..=255u16)
        .map(|v| {
            (m * (v as f64 - 128.0) + 128.0 + b)
                .round()
                .clamp(0.0, 255.0) as u8
        })
        .collect();
    let mut out = img.clone();
    let c = channel.index();
    for px in out.as_bytes_mut().chunks_exact_mut(3) {
        px[c] = lut[px[c] as usize];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> RgbImage {
        let mut img = RgbImage::filled(1, 256, [0; 3]).unwrap();
        for x in 0..256 {
            img.set(0, x, [x as u8, (255 - x) as u8, (x / 2) as u8]);
        }
        img
    }

    #[test]
    fn degree_zero_is_identity() {
        let img = ramp();
        let limits = ColorLimits {
            gain: 1.7,
            offset: -25.0,
        };
        assert_eq!(color_adjust(&img, ColorChannel::Red, 0.0, &limits), img);
    }

    #[test]
    fn full_offset_adds_forty_clamped() {
        let img = ramp();
        let out = color_adjust(&img, ColorChannel::Red, 1.0, &ColorLimits::default());
        for x in 0..256 {
            assert_eq!(out.get(0, x)[0] as usize, (x + 40).min(255));
        }
    }

    #[test]
    fn other_channels_untouched() {
        let img = ramp();
        let limits = ColorLimits {
            gain: 1.5,
            offset: 20.0,
        };
        let out = color_adjust(&img, ColorChannel::Blue, 0.6, &limits);
        for x in 0..256 {
            let (a, b) = (img.get(0, x), out.get(0, x));
            assert_eq!((a[0], a[1]), (b[0], b[1]));
        }
        // m = 1.3, b = 12 at v = 100: 1.3 * -28 + 140 = 103.6 -> 104.
        assert_eq!(out.get(0, 200)[2], 104);
    }

    #[test]
    fn degree_is_clamped() {
        let img = ramp();
        let l = ColorLimits::default();
        assert_eq!(
            color_adjust(&img, ColorChannel::Red, 3.0, &l),
            color_adjust(&img, ColorChannel::Red, 1.0, &l)
        );
    }
}
