use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{DataError, RgbImage};

pub const MYOCYTE: u8 = 0;
pub const BACKGROUND: u8 = 1;
pub const FIBROSIS: u8 = 2;

/// Per-pixel class indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMap {
    h: usize,
    w: usize,
    classes: Vec<u8>,
}

impl LabelMap {
    pub fn new(h: usize, w: usize, classes: Vec<u8>) -> Result<Self, DataError> {
        if h == 0 || w == 0 || classes.len() != h * w {
            return Err(DataError::Dimensions(format!(
                "{} entries cannot form a {h}x{w} label map",
                classes.len()
            )));
        }
        Ok(Self { h, w, classes })
    }

    pub fn filled(h: usize, w: usize, class: u8) -> Result<Self, DataError> {
        Self::new(h, w, vec![class; h * w])
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

    pub fn as_slice(&self) -> &[u8] {
        &self.classes
    }

    pub fn as_mut_slice(&mut self) -> &mut [u8] {
        &mut self.classes
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.classes
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.classes[y * self.w + x]
    }

    pub fn set(&mut self, y: usize, x: usize, class: u8) {
        self.classes[y * self.w + x] = class;
    }

    pub fn crop(&self, y: usize, x: usize, size_h: usize, size_w: usize) -> LabelMap {
        let mut out = Vec::with_capacity(size_h * size_w);
        for row in y..y + size_h {
            let start = row * self.w + x;
            out.extend_from_slice(&self.classes[start..start + size_w]);
        }
        LabelMap {
            h: size_h,
            w: size_w,
            classes: out,
        }
    }

    /// Pixel count per class; indices at or above `k` are ignored.
    pub fn class_counts(&self, k: usize) -> Vec<u64> {
        let mut counts = vec![0u64; k];
        for &c in &self.classes {
            if let Some(slot) = counts.get_mut(c as usize) {
                *slot += 1;
            }
        }
        counts
    }

    pub fn max_class(&self) -> u8 {
        self.classes.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorEntry {
    pub name: String,
    pub color: [u8; 3],
}

/// Bijective class <-> color table; the class index is the entry position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Colormap {
    pub entries: Vec<ColorEntry>,
}

impl Default for Colormap {
    /// Myocytes red, background white, fibrosis blue.
    fn default() -> Self {
        let e = |name: &str, color| ColorEntry {
            name: name.into(),
            color,
        };
        Self {
            entries: vec![
                e("myocyte", [255, 0, 0]),
                e("background", [255, 255, 255]),
                e("fibrosis", [0, 0, 255]),
            ],
        }
    }
}

impl Colormap {
    pub fn from_colors(colors: &[[u8; 3]]) -> Result<Self, DataError> {
        let map = Self {
            entries: colors
                .iter()
                .enumerate()
                .map(|(i, &color)| ColorEntry {
                    name: format!("class{i}"),
                    color,
                })
                .collect(),
        };
        map.validate()?;
        Ok(map)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.entries.is_empty() || self.entries.len() > u8::MAX as usize {
            return Err(DataError::InvalidConfig(format!(
                "colormap needs between 1 and 255 entries, got {}",
                self.entries.len()
            )));
        }
        let mut seen = HashMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            if let Some(j) = seen.insert(e.color, i) {
                return Err(DataError::InvalidConfig(format!(
                    "colormap entries {j} and {i} share color {:?}",
                    e.color
                )));
            }
        }
        Ok(())
    }
}

/// Decodes a color-coded ground-truth image. Every pixel must match an
/// entry exactly.
pub fn labelmap_from_colors(img: &RgbImage, colormap: &Colormap) -> Result<LabelMap, DataError> {
    colormap.validate()?;
    let lookup: HashMap<[u8; 3], u8> = colormap
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.color, i as u8))
        .collect();
    let mut classes = Vec::with_capacity(img.height() * img.width());
    for (i, px) in img.pixels().enumerate() {
        match lookup.get(&px) {
            Some(&c) => classes.push(c),
            None => {
                return Err(DataError::UnmappedColor {
                    color: px,
                    y: i / img.width(),
                    x: i % img.width(),
                })
            }
        }
    }
    LabelMap::new(img.height(), img.width(), classes)
}

pub fn labelmap_to_colors(labels: &LabelMap, colormap: &Colormap) -> Result<RgbImage, DataError> {
    let mut bytes = Vec::with_capacity(labels.as_slice().len() * 3);
    for &c in labels.as_slice() {
        let entry = colormap
            .entries
            .get(c as usize)
            .ok_or(DataError::ClassOutOfRange {
                class: c,
                classes: colormap.len(),
            })?;
        bytes.extend_from_slice(&entry.color);
    }
    RgbImage::new(labels.height(), labels.width(), bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_blue_is_fibrosis() {
        let img = RgbImage::filled(3, 4, [0, 0, 255]).unwrap();
        let lm = labelmap_from_colors(&img, &Colormap::default()).unwrap();
        assert!(lm.as_slice().iter().all(|&c| c == FIBROSIS));
    }

    #[test]
    fn unmapped_color_reports_location() {
        let mut img = RgbImage::filled(3, 4, [255, 255, 255]).unwrap();
        img.set(2, 1, [0, 255, 0]);
        let err = labelmap_from_colors(&img, &Colormap::default()).unwrap_err();
        match err {
            DataError::UnmappedColor { color, y, x } => {
                assert_eq!((color, y, x), ([0, 255, 0], 2, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_colors_are_rejected() {
        assert!(Colormap::from_colors(&[[1, 2, 3], [1, 2, 3]]).is_err());
    }

    #[test]
    fn class_out_of_range_when_coloring() {
        let lm = LabelMap::filled(2, 2, 5).unwrap();
        assert!(labelmap_to_colors(&lm, &Colormap::default()).is_err());
    }

    proptest! {
        #[test]
        fn class_color_class_is_identity(classes in prop::collection::vec(0u8..3, 1..200)) {
            let w = classes.len();
            let lm = LabelMap::new(1, w, classes).unwrap();
            let map = Colormap::default();
            let back = labelmap_from_colors(&labelmap_to_colors(&lm, &map).unwrap(), &map).unwrap();
            prop_assert_eq!(back, lm);
        }
    }
}
