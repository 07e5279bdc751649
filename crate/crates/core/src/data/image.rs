use std::io::Cursor;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{ColorType, DynamicImage, ImageEncoder, ImageError, ImageFormat, ImageReader};

use super::DataError;

/// 8-bit RGB raster, row-major, three bytes per pixel.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RgbImage {
    h: usize,
    w: usize,
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(h: usize, w: usize, pixels: Vec<u8>) -> Result<Self, DataError> {
        if h == 0 || w == 0 || pixels.len() != h * w * 3 {
            return Err(DataError::Dimensions(format!(
                "{} bytes cannot form a {h}x{w} RGB image",
                pixels.len()
            )));
        }
        Ok(Self { h, w, pixels })
    }

    pub fn filled(h: usize, w: usize, rgb: [u8; 3]) -> Result<Self, DataError> {
        Self::new(h, w, rgb.repeat(h * w))
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.pixels
    }

    pub fn as_bytes_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.w + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.w + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.pixels.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// Copies the `size_h x size_w` window whose top-left corner is `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, size_h: usize, size_w: usize) -> RgbImage {
        let mut out = Vec::with_capacity(size_h * size_w * 3);
        for row in y..y + size_h {
            let start = (row * self.w + x) * 3;
            out.extend_from_slice(&self.pixels[start..start + size_w * 3]);
        }
        RgbImage {
            h: size_h,
            w: size_w,
            pixels: out,
        }
    }
}

fn describe(color: image::ColorType) -> (bool, u8) {
    // (16-bit or float, channel count)
    let wide = color.bytes_per_pixel() / color.channel_count() > 1;
    (wide, color.channel_count())
}

fn decode_error(path: &Path, err: ImageError) -> DataError {
    match err {
        ImageError::Unsupported(e) => DataError::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: e.to_string(),
        },
        ImageError::IoError(e) if e.kind() != std::io::ErrorKind::UnexpectedEof => DataError::Io {
            path: path.to_path_buf(),
            source: e,
        },
        other => DataError::CorruptImage {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    }
}

/// Reads an 8-bit RGB PNG.
pub fn decode_image(path: &Path) -> Result<RgbImage, DataError> {
    let reader = ImageReader::open(path)
        .map_err(|e| DataError::Io {
            path: path.to_path_buf(),
            source: e,
        })?
        .with_guessed_format()
        .map_err(|e| DataError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    if reader.format() != Some(ImageFormat::Png) {
        return Err(DataError::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: "only PNG is supported".into(),
        });
    }
    let img = reader.decode().map_err(|e| decode_error(path, e))?;
    let (wide, channels) = describe(img.color());
    if wide {
        return Err(DataError::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: format!("{:?} has more than 8 bits per sample", img.color()),
        });
    }
    if channels != 3 {
        return Err(DataError::ChannelCount {
            path: path.to_path_buf(),
            channels: channels as usize,
        });
    }
    let DynamicImage::ImageRgb8(buf) = img else {
        unreachable!("8-bit three-channel PNG decodes to Rgb8")
    };
    let (w, h) = buf.dimensions();
    RgbImage::new(h as usize, w as usize, buf.into_raw())
}

pub fn png_bytes(img: &RgbImage) -> Result<Vec<u8>, DataError> {
    let mut out = Cursor::new(Vec::new());
    PngEncoder::new(&mut out)
        .write_image(
            img.as_bytes(),
            img.width() as u32,
            img.height() as u32,
            ColorType::Rgb8.into(),
        )
        .map_err(|e| DataError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn encode_image(img: &RgbImage, path: &Path) -> Result<(), DataError> {
    let bytes = png_bytes(img)?;
    std::fs::write(path, bytes).map_err(|e| DataError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(h: usize, w: usize) -> RgbImage {
        let mut img = RgbImage::filled(h, w, [0, 0, 0]).unwrap();
        for y in 0..h {
            for x in 0..w {
                img.set(y, x, [(x * 7) as u8, (y * 13) as u8, ((x + y) * 3) as u8]);
            }
        }
        img
    }

    #[test]
    fn png_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = gradient(17, 23);
        encode_image(&img, &p).unwrap();
        assert_eq!(decode_image(&p).unwrap(), img);
    }

    #[test]
    fn sixteen_bit_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("wide.png");
        image::ImageBuffer::<image::Rgb<u16>, _>::from_pixel(4, 4, image::Rgb([1000u16, 2, 3]))
            .save(&p)
            .unwrap();
        assert!(matches!(
            decode_image(&p),
            Err(DataError::UnsupportedFormat { .. })
        ));
    }

    #[test]
    fn grayscale_has_wrong_channel_count() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gray.png");
        image::GrayImage::from_pixel(4, 4, image::Luma([9u8]))
            .save(&p)
            .unwrap();
        assert!(matches!(
            decode_image(&p),
            Err(DataError::ChannelCount { channels: 1, .. })
        ));
    }

    #[test]
    fn truncated_png_is_corrupt_not_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cut.png");
        let bytes = png_bytes(&gradient(40, 40)).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            decode_image(&p),
            Err(DataError::CorruptImage { .. })
        ));
    }

    #[test]
    fn non_png_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        std::fs::write(&p, b"BM this is not a png").unwrap();
        assert!(matches!(
            decode_image(&p),
            Err(DataError::UnsupportedFormat { .. })
        ));
    }

    #[test]
    fn crop_copies_window() {
        let img = gradient(5, 6);
        let c = img.crop(1, 2, 3, 2);
        assert_eq!(c.dims(), (3, 2));
        assert_eq!(c.get(0, 0), img.get(1, 2));
        assert_eq!(c.get(2, 1), img.get(3, 3));
    }
}
