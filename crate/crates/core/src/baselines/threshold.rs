use serde::{Deserialize, Serialize};

use super::BaselineError;
use crate::data::{LabelMap, Palette, RgbImage, BACKGROUND, FIBROSIS, MYOCYTE};

/// Inclusive intensity range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: u8,
    pub hi: u8,
}

impl Interval {
    pub fn new(lo: u8, hi: u8) -> Self {
        Self { lo, hi }
    }

    pub fn point(v: u8) -> Self {
        Self { lo: v, hi: v }
    }

    fn contains(&self, v: u8) -> bool {
        (self.lo..=self.hi).contains(&v)
    }
}

/// Matches when every constrained channel lies in its interval.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub class: u8,
    #[serde(default)]
    pub red: Option<Interval>,
    #[serde(default)]
    pub green: Option<Interval>,
    #[serde(default)]
    pub blue: Option<Interval>,
}

impl ThresholdRule {
    fn matches(&self, p: [u8; 3]) -> bool {
        [self.red, self.green, self.blue]
            .iter()
            .zip(p)
            .all(|(iv, v)| iv.map_or(true, |iv| iv.contains(v)))
    }
}

/// Ordered rules with first-match semantics and a catch-all class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdRuleSet {
    pub rules: Vec<ThresholdRule>,
    pub default_class: u8,
}

impl Default for ThresholdRuleSet {
    /// Blue-dominant pixels are fibrosis, bright pixels background, the rest
    /// myocyte.
    fn default() -> Self {
        Self {
            rules: vec![
                ThresholdRule {
                    class: FIBROSIS,
                    red: Some(Interval::new(0, 149)),
                    green: None,
                    blue: Some(Interval::new(180, 255)),
                },
                ThresholdRule {
                    class: BACKGROUND,
                    red: Some(Interval::new(200, 255)),
                    green: Some(Interval::new(200, 255)),
                    blue: Some(Interval::new(200, 255)),
                },
            ],
            default_class: MYOCYTE,
        }
    }
}

impl ThresholdRuleSet {
    /// Exact-color rules for every palette entry but the last class, which
    /// becomes the default.
    pub fn from_palette(palette: &Palette) -> Self {
        let colors = palette.colors();
        let last = colors.len() - 1;
        Self {
            rules: colors[..last]
                .iter()
                .enumerate()
                .map(|(c, rgb)| ThresholdRule {
                    class: c as u8,
                    red: Some(Interval::point(rgb[0])),
                    green: Some(Interval::point(rgb[1])),
                    blue: Some(Interval::point(rgb[2])),
                })
                .collect(),
            default_class: last as u8,
        }
    }

    pub fn validate(&self) -> Result<(), BaselineError> {
        for (i, r) in self.rules.iter().enumerate() {
            for (name, iv) in [("red", r.red), ("green", r.green), ("blue", r.blue)] {
                if let Some(iv) = iv {
                    if iv.lo > iv.hi {
                        return Err(BaselineError::InvalidConfig(format!(
                            "rule {i}: {name} interval [{}, {}] is empty",
                            iv.lo, iv.hi
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn classify(&self, p: [u8; 3]) -> u8 {
        self.rules
            .iter()
            .find(|r| r.matches(p))
            .map_or(self.default_class, |r| r.class)
    }
}

pub fn multiband_threshold(
    img: &RgbImage,
    rules: &ThresholdRuleSet,
) -> Result<LabelMap, BaselineError> {
    rules.validate()?;
    let classes = img.pixels().map(|p| rules.classify(p)).collect();
    Ok(LabelMap::new(img.height(), img.width(), classes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthParams};

    #[test]
    fn blue_pixel_is_fibrosis() {
        let rules = ThresholdRuleSet::default();
        assert_eq!(rules.classify([0, 0, 255]), FIBROSIS);
        assert_eq!(rules.classify([255, 255, 255]), BACKGROUND);
        assert_eq!(rules.classify([120, 200, 90]), MYOCYTE);
    }

    #[test]
    fn empty_interval_is_rejected() {
        let mut rules = ThresholdRuleSet::default();
        rules.rules[0].red = Some(Interval::new(10, 5));
        let img = RgbImage::filled(2, 2, [0; 3]).unwrap();
        assert!(matches!(
            multiband_threshold(&img, &rules),
            Err(BaselineError::InvalidConfig(_))
        ));
    }

    #[test]
    fn palette_rules_recover_noiseless_truth() {
        let params = SynthParams {
            jitter: 0.0,
            noise: 0.0,
            texture: 0.0,
            ..SynthParams::default()
        };
        let rules = ThresholdRuleSet::from_palette(&params.palette);
        for (img, truth) in synth_generate(&params, 2, (48, 64)).unwrap() {
            assert_eq!(multiband_threshold(&img, &rules).unwrap(), truth);
        }
    }

    #[test]
    fn every_color_gets_one_class() {
        let rules = ThresholdRuleSet::default();
        for r in (0..=255u8).step_by(15) {
            for g in (0..=255u8).step_by(15) {
                for b in (0..=255u8).step_by(15) {
                    assert!(rules.classify([r, g, b]) < 3);
                }
            }
        }
    }
}
