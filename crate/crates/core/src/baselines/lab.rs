use crate::data::RgbImage;

// sRGB primaries to XYZ, D65 white, 2-degree observer.
const M: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

fn linearize(v: u8) -> f64 {
    let c = v as f64 / 255.0;
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn f(t: f64) -> f64 {
    const D: f64 = 6.0 / 29.0;
    if t > D * D * D {
        t.cbrt()
    } else {
        t / (3.0 * D * D) + 4.0 / 29.0
    }
}

/// CIE L*a*b* of one sRGB triple. The reference white is the XYZ of sRGB
/// white, so neutral grays land exactly on a* = b* = 0.
pub fn srgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = rgb.map(linearize);
    let xyz: Vec<f64> = M
        .iter()
        .map(|row| row.iter().zip(&lin).map(|(m, c)| m * c).sum())
        .collect();
    let white: Vec<f64> = M.iter().map(|row| row.iter().sum()).collect();
    let (fx, fy, fz) = (
        f(xyz[0] / white[0]),
        f(xyz[1] / white[1]),
        f(xyz[2] / white[2]),
    );
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn rgb_to_lab(img: &RgbImage) -> Vec<[f64; 3]> {
    let mut cache = std::collections::HashMap::new();
    img.pixels()
        .map(|p| *cache.entry(p).or_insert_with(|| srgb_to_lab(p)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_points() {
        let w = srgb_to_lab([255, 255, 255]);
        assert!((w[0] - 100.0).abs() < 1e-9 && w[1].abs() < 0.01 && w[2].abs() < 0.01);
        assert_eq!(srgb_to_lab([0, 0, 0])[0], 0.0);
        for v in [1u8, 17, 90, 128, 200, 254] {
            let g = srgb_to_lab([v, v, v]);
            assert!(g[1].abs() < 1e-9 && g[2].abs() < 1e-9, "{v}: {g:?}");
        }
    }

    #[test]
    fn primaries_match_published_values() {
        // Red and blue in D65 Lab, to two decimals.
        let r = srgb_to_lab([255, 0, 0]);
        assert!(
            (r[0] - 53.24).abs() < 0.01
                && (r[1] - 80.09).abs() < 0.01
                && (r[2] - 67.20).abs() < 0.01,
            "{r:?}"
        );
        let b = srgb_to_lab([0, 0, 255]);
        assert!(
            (b[0] - 32.30).abs() < 0.01
                && (b[1] - 79.19).abs() < 0.01
                && (b[2] + 107.86).abs() < 0.01,
            "{b:?}"
        );
    }
}
