//! Mini-batch training with per-epoch shuffling, evaluation by mean DSC,
//! patience-based early stopping, checkpointing and `history.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    standardize, standardize_batch, ChannelStats, DataError, LabelMap, PatchSet, RgbImage,
};
use crate::loss::{
    argmax_channels, cross_entropy, pixel_accuracy, softmax, softmax_ce_gradient, LossError,
};
use crate::metrics::{score_image, ImageScores, MetricsError, ScoreTable};
use crate::network::{save_model_with_stats, Network, NetworkError};
use crate::numerics::Mode;
use crate::optim::{adam_step, AdamConfig, AdamState};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("history output failed: {0}")]
    Csv(#[from] csv::Error),
}

impl TrainError {
    /// Whether the error comes from non-finite arithmetic rather than bad
    /// input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            TrainError::Network(
                NetworkError::Divergence { .. } | NetworkError::NonFiniteParameter { .. }
            ) | TrainError::Loss(LossError::NonFinite(_))
        )
    }
}

/// How the patience rule measures progress.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImprovementRule {
    /// `dsc >= anchor * (1 + min_improvement)`.
    #[default]
    Relative,
    /// `dsc >= anchor + min_improvement`.
    Absolute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_improvement: f64,
    pub improvement_rule: ImprovementRule,
    pub eval_every: usize,
    pub seed: u64,
    pub checkpoint_dir: Option<PathBuf>,
    pub keep_all_checkpoints: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            max_epochs: 100,
            patience: 20,
            min_improvement: 0.01,
            improvement_rule: ImprovementRule::Relative,
            eval_every: 1,
            seed: 0,
            checkpoint_dir: None,
            keep_all_checkpoints: false,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.batch_size == 0
            || self.patience == 0
            || self.eval_every == 0
            || self.max_epochs == 0
        {
            return bad(
                "batch size, patience, eval interval and max epochs must be at least 1".into(),
            );
        }
        if !(self.min_improvement > 0.0 && self.min_improvement < 1.0) {
            return bad(format!(
                "min_improvement {} must lie in (0, 1)",
                self.min_improvement
            ));
        }
        AdamState::<f32>::new(self.adam, &[])
            .map_err(|_| TrainError::InvalidConfig(format!("Adam settings {:?}", self.adam)))?;
        Ok(())
    }

    fn qualifies(&self, dsc: f64, anchor: f64) -> bool {
        match self.improvement_rule {
            ImprovementRule::Relative => dsc >= anchor * (1.0 + self.min_improvement),
            ImprovementRule::Absolute => dsc >= anchor + self.min_improvement,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    /// Absent on epochs skipped by `eval_every`.
    pub eval_mean_dsc: Option<f64>,
    /// Loss of the final mini-batch, whose contents never change.
    pub last_batch_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch with the highest evaluation mean DSC (earliest on ties).
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch.map(|e| &self.records[e - 1])
    }

    fn push(&mut self, rec: EpochRecord) {
        if let Some(d) = rec.eval_mean_dsc {
            let better = self
                .best()
                .and_then(|b| b.eval_mean_dsc)
                .map_or(true, |b| d > b);
            if better {
                self.best_epoch = Some(rec.epoch);
            }
        }
        self.records.push(rec);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Epoch of the last qualifying improvement. The first evaluated epoch
/// always qualifies; afterwards an epoch qualifies only by beating the
/// current anchor by the configured margin.
pub fn patience_anchor(history: &TrainHistory, config: &TrainConfig) -> Option<(usize, f64)> {
    let mut anchor: Option<(usize, f64)> = None;
    for r in &history.records {
        if let Some(d) = r.eval_mean_dsc {
            match anchor {
                Some((_, a)) if !config.qualifies(d, a) => {}
                _ => anchor = Some((r.epoch, d)),
            }
        }
    }
    anchor
}

/// Stops once `patience` epochs have passed since the last qualifying
/// improvement.
pub fn early_stop_check(history: &TrainHistory, config: &TrainConfig) -> StopDecision {
    let (Some(last), Some((anchor, _))) =
        (history.records.last(), patience_anchor(history, config))
    else {
        return StopDecision::Continue;
    };
    if last.epoch - anchor >= config.patience {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    }
}

/// Re-permutes every patch outside the final mini-batch; the final batch
/// keeps its members and position.
pub fn shuffle_epoch(set: &mut PatchSet, rng: &mut impl Rng) {
    let n = set.patches.len();
    let fixed = set.batch_size.min(n);
    set.patches[..n - fixed].shuffle(rng);
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
    pub batches: usize,
    pub last_batch_loss: f64,
}

fn batch_labels<'a>(labels: impl Iterator<Item = &'a LabelMap>) -> Vec<u8> {
    labels.flat_map(|l| l.as_slice().iter().copied()).collect()
}

/// One pass over the set in its current order: forward, loss, backward and
/// an Adam update per mini-batch. Returns pixel-weighted means.
pub fn train_epoch(
    net: &mut Network,
    set: &PatchSet,
    adam: &mut AdamState<f32>,
    stats: &ChannelStats,
) -> Result<EpochStats, TrainError> {
    let (mut loss_sum, mut acc_sum, mut pixels) = (0.0, 0.0, 0usize);
    let mut last = 0.0;
    let mut batches = 0;
    for batch in set.batches() {
        let x = standardize_batch(batch.iter().map(|p| &p.image), stats)?;
        let y = batch_labels(batch.iter().map(|p| &p.labels));
        let (logits, cache) = net.forward(&x, Mode::Train)?;
        let cache = cache.expect("train mode yields a cache");
        let loss = cross_entropy(&softmax(&logits)?, &y)?;
        if !loss.is_finite() {
            return Err(LossError::NonFinite("training loss").into());
        }
        let acc = pixel_accuracy(&logits, &y);
        let grad = softmax_ce_gradient(&logits, &y)?;
        let grads = net.backward(&cache, &grad)?;
        net.update_running_stats(&cache);
        adam_step(&mut net.param_blocks_mut(), &grads.blocks(), adam)?;
        let n = y.len();
        loss_sum += loss * n as f64;
        acc_sum += acc * n as f64;
        pixels += n;
        last = loss;
        batches += 1;
    }
    Ok(EpochStats {
        loss: loss_sum / pixels.max(1) as f64,
        accuracy: acc_sum / pixels.max(1) as f64,
        batches,
        last_batch_loss: last,
    })
}

/// Full-resolution class map for one image, inference-mode statistics.
pub fn predict_labels(
    net: &Network,
    img: &RgbImage,
    stats: &ChannelStats,
) -> Result<LabelMap, TrainError> {
    let x = standardize(img, stats)?;
    let (logits, _) = net.forward(&x, Mode::Infer)?;
    Ok(LabelMap::new(
        img.height(),
        img.width(),
        argmax_channels(&logits),
    )?)
}

/// Scores the network on whole images, one image per forward pass.
pub fn evaluate_model(
    net: &Network,
    names: &[String],
    pairs: &[(RgbImage, LabelMap)],
    stats: &ChannelStats,
) -> Result<ScoreTable, TrainError> {
    if names.len() != pairs.len() {
        return Err(TrainError::InvalidConfig(format!(
            "{} names for {} evaluation images",
            names.len(),
            pairs.len()
        )));
    }
    let k = net.class_count();
    let scores: Vec<ImageScores> = names
        .par_iter()
        .zip(pairs)
        .map(|(name, (img, truth))| {
            let pred = predict_labels(net, img, stats)?;
            Ok(score_image(name.clone(), &pred, truth, k)?)
        })
        .collect::<Result<_, TrainError>>()?;
    Ok(crate::metrics::aggregate(scores)?)
}

#[derive(Clone, Debug, PartialEq)]
pub enum StopReason {
    EarlyStop { epoch: usize },
    MaxEpochs,
    Diverged { epoch: usize, detail: String },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Network of the best evaluated epoch, or the last good one if no
    /// epoch was evaluated before a divergence.
    pub network: Network,
    pub history: TrainHistory,
    pub stop: StopReason,
    pub best_scores: Option<ScoreTable>,
}

/// Evaluation images for model selection.
pub struct EvalSet<'a> {
    pub names: &'a [String],
    pub pairs: &'a [(RgbImage, LabelMap)],
}

fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:04}.hsg"))
}

fn prune_checkpoints(dir: &Path, keep: &[usize]) -> Result<(), TrainError> {
    let io = |source| TrainError::Io {
        path: dir.to_path_buf(),
        source,
    };
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        let epoch = name
            .strip_prefix("epoch_")
            .and_then(|s| s.strip_suffix(".hsg"))
            .and_then(|s| s.parse::<usize>().ok());
        if let Some(e) = epoch {
            if !keep.contains(&e) {
                fs::remove_file(&path).map_err(|source| TrainError::Io { path, source })?;
            }
        }
    }
    Ok(())
}

/// Trains until the patience rule fires or `max_epochs` is reached. The
/// set is reshuffled (all but the final batch) before every epoch.
pub fn train(
    net: Network,
    set: &mut PatchSet,
    eval: &EvalSet<'_>,
    stats: &ChannelStats,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_with_observer(net, set, eval, stats, config, |_| {})
}

/// [`train`], calling `on_epoch` after each completed epoch.
pub fn train_with_observer(
    mut net: Network,
    set: &mut PatchSet,
    eval: &EvalSet<'_>,
    stats: &ChannelStats,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if set.batch_size != config.batch_size {
        return Err(TrainError::InvalidConfig(format!(
            "patch set batches by {}, config by {}",
            set.batch_size, config.batch_size
        )));
    }
    if set.is_empty() || set.len() % set.batch_size != 0 {
        return Err(TrainError::InvalidConfig(format!(
            "{} patches do not form whole batches of {}",
            set.len(),
            set.batch_size
        )));
    }
    if let Some(dir) = &config.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|source| TrainError::Io {
            path: dir.clone(),
            source,
        })?;
    }
    let lens: Vec<usize> = net.param_blocks().iter().map(|b| b.len()).collect();
    let mut adam = AdamState::new(config.adam, &lens)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = TrainHistory::default();
    let mut best: Option<(Network, ScoreTable)> = None;
    let mut stop = StopReason::MaxEpochs;
    for epoch in 1..=config.max_epochs {
        let last_good = net.clone();
        shuffle_epoch(set, &mut rng);
        let stats_epoch = match train_epoch(&mut net, set, &mut adam, stats) {
            Ok(s) => s,
            Err(e) if e.is_numerical() => {
                net = last_good;
                stop = StopReason::Diverged {
                    epoch,
                    detail: e.to_string(),
                };
                break;
            }
            Err(e) => return Err(e),
        };
        let scores = if epoch % config.eval_every == 0 || epoch == config.max_epochs {
            Some(evaluate_model(&net, eval.names, eval.pairs, stats)?)
        } else {
            None
        };
        history.push(EpochRecord {
            epoch,
            loss: stats_epoch.loss,
            train_acc: stats_epoch.accuracy,
            eval_mean_dsc: scores.as_ref().map(|s| s.mean_dsc),
            last_batch_loss: stats_epoch.last_batch_loss,
        });
        on_epoch(history.records.last().expect("just pushed"));
        if let Some(s) = scores {
            if history.best_epoch == Some(epoch) {
                best = Some((net.clone(), s));
            }
        }
        if let Some(dir) = &config.checkpoint_dir {
            save_model_with_stats(&net, Some(stats), &checkpoint_path(dir, epoch))?;
            if !config.keep_all_checkpoints {
                let keep: Vec<usize> = history.best_epoch.into_iter().chain([epoch]).collect();
                prune_checkpoints(dir, &keep)?;
            }
        }
        if early_stop_check(&history, config) == StopDecision::Stop {
            stop = StopReason::EarlyStop { epoch };
            break;
        }
    }
    let (network, best_scores) = match best {
        Some((n, s)) => (n, Some(s)),
        None => (net, None),
    };
    Ok(TrainOutcome {
        network,
        history,
        stop,
        best_scores,
    })
}

/// `epoch,loss,train_acc,eval_mean_dsc`; unevaluated epochs leave the last
/// field empty.
pub fn write_history_csv<W: std::io::Write>(
    out: W,
    history: &TrainHistory,
) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "loss", "train_acc", "eval_mean_dsc"])?;
    for r in &history.records {
        w.write_record([
            r.epoch.to_string(),
            format!("{:.9}", r.loss),
            format!("{:.9}", r.train_acc),
            r.eval_mean_dsc
                .map(|d| format!("{d:.9}"))
                .unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
