//! The TOML run configuration. Every section is optional; flags given on the
//! command line override the file.

use std::path::Path;

use histoseg::baselines::{KmeansConfig, ThresholdRuleSet};
use histoseg::data::{AugmentPlan, ColorLimits, Colormap, SynthParams};
use histoseg::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Size and split of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetLayout {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    /// Images placed in `eval/`; defaults to a third of `count`.
    pub eval_count: Option<usize>,
}

impl Default for DatasetLayout {
    fn default() -> Self {
        Self {
            count: 12,
            width: 256,
            height: 256,
            eval_count: None,
        }
    }
}

impl DatasetLayout {
    pub fn eval_images(&self) -> usize {
        self.eval_count.unwrap_or(self.count / 3)
    }
}

/// Experimental protocol switches for `train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Protocol {
    /// Share of training images held out for model selection.
    pub validation_fraction: f64,
    /// Select the model on the evaluation set instead of a held-out split.
    pub select_on_eval: bool,
    pub balanced: bool,
    pub color_augment: bool,
    /// Additional 3x3 64-channel layers inserted before the classifier.
    pub extra_layers: usize,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            validation_fraction: 0.25,
            select_on_eval: false,
            balanced: false,
            color_augment: false,
            extra_layers: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Synthesis, initialization, patch sampling, shuffling and
    /// clustering all derive their streams from it.
    pub seed: u64,
    pub dataset: DatasetLayout,
    pub synth: SynthParams,
    pub augment: AugmentPlan,
    pub color_limits: ColorLimits,
    pub train: TrainConfig,
    pub protocol: Protocol,
    pub kmeans: KmeansConfig,
    pub threshold: ThresholdRuleSet,
    pub colormap: Colormap,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::usage(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self)
            .map_err(|e| CliError::usage(format!("config cannot be rendered: {e}")))
    }

    /// Checks every section, so a bad value fails before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        let usage =
            |e: &dyn std::fmt::Display| CliError::usage(format!("invalid configuration: {e}"));
        if self.seed > i64::MAX as u64 {
            return Err(CliError::usage(format!(
                "seed {} exceeds {}",
                self.seed,
                i64::MAX
            )));
        }
        self.synth.validate().map_err(|e| usage(&e))?;
        self.augment.validate().map_err(|e| usage(&e))?;
        self.train.validate().map_err(|e| usage(&e))?;
        self.kmeans.validate().map_err(|e| usage(&e))?;
        self.threshold.validate().map_err(|e| usage(&e))?;
        self.colormap.validate().map_err(|e| usage(&e))?;
        let l = &self.color_limits;
        if !(l.gain.is_finite() && l.gain >= 0.0 && l.offset.is_finite() && l.offset >= 0.0) {
            return Err(CliError::usage(format!("invalid color limits {l:?}")));
        }
        if !(0.0..1.0).contains(&self.protocol.validation_fraction) {
            return Err(CliError::usage(format!(
                "validation fraction {} must lie in [0, 1)",
                self.protocol.validation_fraction
            )));
        }
        if self.colormap.len() != self.augment.classes {
            return Err(CliError::usage(format!(
                "colormap has {} classes, augment plan {}",
                self.colormap.len(),
                self.augment.classes
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guide_example_parses() {
        let guide = include_str!("../../../book/src/cli.md");
        let start = guide.find("```toml\n").unwrap() + 8;
        let len = guide[start..].find("```").unwrap();
        let cfg = RunConfig::parse(&guide[start..start + len]).unwrap();
        cfg.validate().unwrap();
        assert_eq!(
            cfg,
            RunConfig {
                seed: 7,
                dataset: DatasetLayout {
                    eval_count: Some(4),
                    ..Default::default()
                },
                ..Default::default()
            }
        );
    }

    #[test]
    fn default_roundtrips_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg =
            RunConfig::parse("seed = 9\n[train]\nmax_epochs = 3\n[augment]\nrot90 = 5\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.max_epochs, 3);
        assert_eq!(cfg.train.patience, 20);
        assert_eq!(cfg.augment.rot90, 5);
        assert_eq!(cfg.augment.rot180, 900);
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let e = RunConfig::parse("[train]\nmax_epoch = 3\n").unwrap_err();
        assert_eq!(e.exit_code(), 1);
        let e = RunConfig::parse("sed = 3\n").unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn invalid_values_are_caught() {
        let mut cfg = RunConfig::default();
        cfg.train.patience = 0;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 1);
        let mut cfg = RunConfig::default();
        cfg.synth.fractions = [0.5, 0.5, 0.5];
        assert!(cfg.validate().is_err());
    }
}
