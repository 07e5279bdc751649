use std::fmt;

use serde::{Deserialize, Serialize};

use super::{DataError, LabelMap, RgbImage};

/// The seven augmentation families, in plan order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Rot90,
    Rot180,
    Rot270,
    FlipH,
    FlipV,
    Warp,
    Shear,
}

impl TransformKind {
    pub const ALL: [TransformKind; 7] = [
        TransformKind::Rot90,
        TransformKind::Rot180,
        TransformKind::Rot270,
        TransformKind::FlipH,
        TransformKind::FlipV,
        TransformKind::Warp,
        TransformKind::Shear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Rot90 => "rot90",
            TransformKind::Rot180 => "rot180",
            TransformKind::Rot270 => "rot270",
            TransformKind::FlipH => "flip_h",
            TransformKind::FlipV => "flip_v",
            TransformKind::Warp => "warp",
            TransformKind::Shear => "shear",
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A geometric transform applied identically to an image and its labels.
///
/// Rotations are clockwise. `Warp` samples `out(y, x) = in(y, x - A sin(2 pi y / wavelength))`;
/// `Shear` samples `out(y, x) = in(y, x - s (y - cy))` with `cy` the middle row.
/// Both reflect at the border.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Transform {
    Rot90,
    Rot180,
    Rot270,
    FlipH,
    FlipV,
    Warp { amplitude: f64, wavelength: f64 },
    Shear { factor: f64 },
}

impl Transform {
    pub fn kind(&self) -> TransformKind {
        match self {
            Transform::Rot90 => TransformKind::Rot90,
            Transform::Rot180 => TransformKind::Rot180,
            Transform::Rot270 => TransformKind::Rot270,
            Transform::FlipH => TransformKind::FlipH,
            Transform::FlipV => TransformKind::FlipV,
            Transform::Warp { .. } => TransformKind::Warp,
            Transform::Shear { .. } => TransformKind::Shear,
        }
    }

    /// Output dims for an `h x w` input.
    pub fn output_dims(&self, h: usize, w: usize) -> (usize, usize) {
        match self {
            Transform::Rot90 | Transform::Rot270 => (w, h),
            _ => (h, w),
        }
    }

    fn validate(&self, h: usize, w: usize) -> Result<(), DataError> {
        match *self {
            Transform::Warp {
                amplitude,
                wavelength,
            } => {
                if !amplitude.is_finite() || !wavelength.is_finite() || wavelength <= 0.0 {
                    return Err(DataError::InvalidTransform(format!(
                        "warp amplitude {amplitude}, wavelength {wavelength}"
                    )));
                }
                if amplitude.abs() >= w as f64 {
                    return Err(DataError::InvalidTransform(format!(
                        "warp amplitude {amplitude} reaches past the {w}-pixel width"
                    )));
                }
            }
            Transform::Shear { factor } => {
                let reach = factor.abs() * (h.saturating_sub(1)) as f64 / 2.0;
                if !factor.is_finite() || reach >= w as f64 {
                    return Err(DataError::InvalidTransform(format!(
                        "shear factor {factor} displaces rows by up to {reach:.1} pixels, width {w}"
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Horizontal source offset for output row `y`; `None` for the exact
    /// permutations.
    fn row_shift(&self, y: usize, h: usize) -> Option<f64> {
        match *self {
            Transform::Warp {
                amplitude,
                wavelength,
            } => Some(amplitude * (2.0 * std::f64::consts::PI * y as f64 / wavelength).sin()),
            Transform::Shear { factor } => Some(factor * (y as f64 - (h as f64 - 1.0) / 2.0)),
            _ => None,
        }
    }

    /// Source pixel for output `(y, x)` of a permutation transform.
    fn source(&self, y: usize, x: usize, h: usize, w: usize) -> (usize, usize) {
        match self {
            Transform::Rot90 => (h - 1 - x, y),
            Transform::Rot180 => (h - 1 - y, w - 1 - x),
            Transform::Rot270 => (x, w - 1 - y),
            Transform::FlipH => (y, w - 1 - x),
            Transform::FlipV => (h - 1 - y, x),
            _ => unreachable!("resampling transforms have no exact source"),
        }
    }
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < n as i64 { m } else { period - m }) as usize
}

fn permute<T: Copy>(src: &[T], h: usize, w: usize, px: usize, t: &Transform) -> Vec<T> {
    let (oh, ow) = t.output_dims(h, w);
    let mut out = Vec::with_capacity(oh * ow * px);
    for y in 0..oh {
        for x in 0..ow {
            let (sy, sx) = t.source(y, x, h, w);
            let i = (sy * w + sx) * px;
            out.extend_from_slice(&src[i..i + px]);
        }
    }
    out
}

fn check_dims(img: &RgbImage, labels: &LabelMap) -> Result<(), DataError> {
    if labels.dims() != img.dims() {
        return Err(DataError::Dimensions(format!(
            "image is {}x{} but labels are {}x{}",
            img.height(),
            img.width(),
            labels.height(),
            labels.width()
        )));
    }
    Ok(())
}

/// Labels only: nearest-neighbour resampling, so no class is ever invented.
pub fn transform_labels(labels: &LabelMap, t: &Transform) -> Result<LabelMap, DataError> {
    let (h, w) = labels.dims();
    t.validate(h, w)?;
    let (oh, ow) = t.output_dims(h, w);
    if t.row_shift(0, h).is_none() {
        return LabelMap::new(oh, ow, permute(labels.as_slice(), h, w, 1, t));
    }
    let src = labels.as_slice();
    let mut out = vec![0u8; h * w];
    for y in 0..h {
        let shift = t.row_shift(y, h).unwrap_or(0.0);
        for x in 0..w {
            out[y * w + x] = src[y * w + reflect((x as f64 - shift).round() as i64, w)];
        }
    }
    LabelMap::new(h, w, out)
}

fn transform_pixels(img: &RgbImage, t: &Transform) -> Result<RgbImage, DataError> {
    let (h, w) = img.dims();
    t.validate(h, w)?;
    let (oh, ow) = t.output_dims(h, w);
    if t.row_shift(0, h).is_none() {
        return RgbImage::new(oh, ow, permute(img.as_bytes(), h, w, 3, t));
    }
    let src = img.as_bytes();
    let mut out = vec![0u8; h * w * 3];
    for y in 0..h {
        let shift = t.row_shift(y, h).unwrap_or(0.0);
        let row = &src[y * w * 3..(y + 1) * w * 3];
        for x in 0..w {
            let sx = x as f64 - shift;
            let x0 = sx.floor();
            let f = sx - x0;
            let a = reflect(x0 as i64, w) * 3;
            let b = reflect(x0 as i64 + 1, w) * 3;
            let o = (y * w + x) * 3;
            for c in 0..3 {
                let v = (1.0 - f) * row[a + c] as f64 + f * row[b + c] as f64;
                out[o + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    RgbImage::new(h, w, out)
}

/// Applies `t` to both rasters: bilinear for the image, nearest for labels.
pub fn apply_transform(
    img: &RgbImage,
    labels: &LabelMap,
    t: &Transform,
) -> Result<(RgbImage, LabelMap), DataError> {
    check_dims(img, labels)?;
    Ok((transform_pixels(img, t)?, transform_labels(labels, t)?))
}
