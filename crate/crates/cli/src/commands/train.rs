use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use clap::Args;
use histoseg::data::{
    build_balanced_training_set, build_training_set, color_augment, compute_channel_stats,
    load_dataset, BuildReport, Dataset, LabelMap, RgbImage,
};
use histoseg::metrics::{write_image_csv, write_score_csv, ScoreRow, ScoreTable};
use histoseg::network::{build_network, save_model_with_stats, ArchManifest};
use histoseg::trainer::{
    evaluate_model, train_with_observer, write_history_csv, EvalSet, ImprovementRule, StopReason,
    TrainHistory,
};
use rand::seq::SliceRandom;

use super::synth::{EVAL_DIR, TRAIN_DIR};
use super::{class_names, create_dir, fmt_fractions, resolve_dataset, rng_stream, say, streams};
use crate::{CliError, Context};

pub const MODEL_FILE: &str = "model.hsg";
pub const HISTORY_FILE: &str = "history.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const IMAGE_SCORES_FILE: &str = "scores_per_image.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset root with train/ (and eval/), or a single dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Evaluation dataset (default: eval/ under --data).
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Output directory for the model, history and checkpoints.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam step size.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub min_improvement: Option<f64>,
    /// Count an improvement as `dsc >= anchor + min_improvement`.
    #[arg(long)]
    pub absolute_improvement: bool,
    /// Resample patches toward the balanced class mix.
    #[arg(long)]
    pub balanced: bool,
    /// Apply red/blue color augmentation to the patch set.
    #[arg(long)]
    pub color_augment: bool,
    #[arg(long)]
    pub extra_layers: Option<usize>,
    /// Select the model on the evaluation set rather than a validation split.
    #[arg(long)]
    pub select_on_eval: bool,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// Keep every epoch's checkpoint instead of only best and last.
    #[arg(long)]
    pub keep_checkpoints: bool,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub history: TrainHistory,
    pub stop: StopReason,
    pub patches: BuildReport,
    pub model: PathBuf,
    /// Scores of the selected model on the evaluation set, if there is one.
    pub eval_scores: Option<ScoreTable>,
    pub selection_images: Vec<String>,
}

fn apply_overrides(args: &TrainArgs, ctx: &mut Context<'_>) {
    let cfg = &mut ctx.config;
    if let Some(n) = args.epochs {
        cfg.train.max_epochs = n;
    }
    if let Some(n) = args.batch_size {
        cfg.train.batch_size = n;
    }
    if let Some(lr) = args.lr {
        cfg.train.adam.alpha = lr;
    }
    if let Some(p) = args.patience {
        cfg.train.patience = p;
    }
    if let Some(m) = args.min_improvement {
        cfg.train.min_improvement = m;
    }
    if args.absolute_improvement {
        cfg.train.improvement_rule = ImprovementRule::Absolute;
    }
    if let Some(v) = args.validation_fraction {
        cfg.protocol.validation_fraction = v;
    }
    if let Some(n) = args.extra_layers {
        cfg.protocol.extra_layers = n;
    }
    let p = &mut cfg.protocol;
    p.balanced |= args.balanced;
    p.color_augment |= args.color_augment;
    p.select_on_eval |= args.select_on_eval;
    cfg.train.keep_all_checkpoints |= args.keep_checkpoints;
    cfg.train.seed = cfg.seed;
    cfg.train.checkpoint_dir = Some(args.out.join(CHECKPOINT_DIR));
    cfg.augment.batch_size = cfg.train.batch_size;
}

type Pairs = Vec<(RgbImage, LabelMap)>;

/// Splits off the model-selection images: the evaluation set under
/// `--select-on-eval`, otherwise a seeded share of the training images.
fn selection_split(
    train: Dataset,
    eval: Option<&Dataset>,
    ctx: &Context<'_>,
) -> Result<(Pairs, Vec<String>, Pairs), CliError> {
    let p = &ctx.config.protocol;
    if p.select_on_eval {
        let eval =
            eval.ok_or_else(|| CliError::data("--select-on-eval needs an evaluation set"))?;
        return Ok((train.pairs, eval.names.clone(), eval.pairs.clone()));
    }
    let n = train.len();
    let n_val = ((n as f64 * p.validation_fraction).round() as usize).max(1);
    if p.validation_fraction == 0.0 || n_val >= n {
        return Err(CliError::usage(format!(
            "a validation fraction of {} leaves no usable split of {n} training images",
            p.validation_fraction
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_stream(ctx.config.seed, streams::SPLIT));
    let mut val_idx = order[..n_val].to_vec();
    val_idx.sort_unstable();
    let (mut fit, mut names, mut val) = (Vec::new(), Vec::new(), Vec::new());
    for (i, (name, pair)) in train.names.into_iter().zip(train.pairs).enumerate() {
        if val_idx.contains(&i) {
            names.push(name);
            val.push(pair);
        } else {
            fit.push(pair);
        }
    }
    Ok((fit, names, val))
}

pub fn cmd_train(args: &TrainArgs, ctx: &mut Context<'_>) -> Result<TrainReport, CliError> {
    apply_overrides(args, ctx);
    ctx.config.validate()?;
    let train_dir = resolve_dataset(&args.data, TRAIN_DIR)?;
    let eval_dir = match &args.eval {
        Some(d) => Some(resolve_dataset(d, EVAL_DIR)?),
        None if train_dir != args.data && args.data.join(EVAL_DIR).is_dir() => {
            Some(resolve_dataset(&args.data, EVAL_DIR)?)
        }
        None => None,
    };
    create_dir(&args.out)?;
    let log = ctx.open_log(Some(args.out.join("run.log")))?;
    let cfg = ctx.config.clone();
    let colormap = &cfg.colormap;

    let train_set = load_dataset(&train_dir, colormap)?;
    let eval_set = eval_dir
        .as_deref()
        .map(|d| load_dataset(d, colormap))
        .transpose()?;
    log.line(&format!(
        "training images: {} from {}",
        train_set.len(),
        train_dir.display()
    ))?;
    let (fit, sel_names, sel_pairs) = selection_split(train_set, eval_set.as_ref(), ctx)?;
    log.line(&format!(
        "model selection on {} images: {}",
        sel_names.len(),
        sel_names.join(", ")
    ))?;
    let images: Vec<RgbImage> = fit.iter().map(|p| p.0.clone()).collect();
    let stats = compute_channel_stats(&images)?;
    log.line(&format!(
        "channel mean {:?} std {:?}",
        stats.mean, stats.std
    ))?;

    let mut rng = rng_stream(cfg.seed, streams::PATCHES);
    let mut set = if cfg.protocol.balanced {
        build_balanced_training_set(&fit, &cfg.augment, &mut rng)?
    } else {
        build_training_set(&fit, &cfg.augment, &mut rng)?
    };
    if cfg.protocol.color_augment {
        color_augment(&mut set, &cfg.color_limits, &mut rng);
    }
    let r = set.report.clone();
    log.line(&format!(
        "patches: {} raw, {} excluded, {} discarded, {} kept in {} batches of {}",
        r.raw, r.excluded, r.discarded, r.count, r.batches, set.batch_size
    ))?;
    log.line(&format!(
        "pooled class fractions: {}{}",
        fmt_fractions(&r.class_fractions),
        if r.oversampled { " (oversampled)" } else { "" }
    ))?;

    let manifest =
        ArchManifest::with_classes(colormap.len()).with_extra_layers(cfg.protocol.extra_layers);
    let net = build_network(manifest, cfg.seed)?;
    let counts = net.count_parameters();
    log.line(&format!("trainable parameters: {}", counts.total))?;
    let selection = EvalSet {
        names: &sel_names,
        pairs: &sel_pairs,
    };
    let mut log_err = None;
    let outcome = train_with_observer(net, &mut set, &selection, &stats, &cfg.train, |rec| {
        let dsc = rec.eval_mean_dsc.map_or("-".into(), |d| format!("{d:.6}"));
        let line = format!(
            "epoch {} loss {:.6} train_acc {:.6} eval_mean_dsc {dsc} last_batch_loss {:.6}",
            rec.epoch, rec.loss, rec.train_acc, rec.last_batch_loss
        );
        if let Err(e) = log.line(&line) {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }

    let model = args.out.join(MODEL_FILE);
    save_model_with_stats(&outcome.network, Some(&stats), &model)?;
    let hist_path = args.out.join(HISTORY_FILE);
    let file = File::create(&hist_path).map_err(|e| CliError::io(&hist_path, e))?;
    write_history_csv(BufWriter::new(file), &outcome.history)?;
    let best = outcome.history.best_epoch;
    log.line(&format!(
        "stop: {:?}; selected epoch {best:?}",
        outcome.stop
    ))?;

    let eval_scores = match &eval_set {
        Some(ds) => {
            let table = evaluate_model(&outcome.network, &ds.names, &ds.pairs, &stats)?;
            let names = class_names(colormap);
            let path = args.out.join(SCORES_FILE);
            let f = File::create(&path).map_err(|e| CliError::io(&path, e))?;
            write_score_csv(
                f,
                &[ScoreRow {
                    method: "cnn",
                    table: &table,
                }],
                &names,
            )?;
            let path = args.out.join(IMAGE_SCORES_FILE);
            let f = File::create(&path).map_err(|e| CliError::io(&path, e))?;
            write_image_csv(f, &table, &names)?;
            log.line(&format!("evaluation mean DSC {:.6}", table.mean_dsc))?;
            Some(table)
        }
        None => None,
    };
    say(
        ctx.out,
        format!(
            "trained {} epochs ({:?}); selected epoch {}; model {}",
            outcome.history.records.len(),
            outcome.stop,
            best.map_or("-".into(), |b| b.to_string()),
            model.display()
        ),
    )?;
    if let Some(t) = &eval_scores {
        say(ctx.out, format!("evaluation mean DSC {:.6}", t.mean_dsc))?;
    }
    if let StopReason::Diverged { epoch, detail } = &outcome.stop {
        return Err(CliError::numerical(format!(
            "training diverged in epoch {epoch}: {detail}; last good model written to {}",
            model.display()
        )));
    }
    Ok(TrainReport {
        history: outcome.history,
        stop: outcome.stop,
        patches: r,
        model,
        eval_scores,
        selection_images: sel_names,
    })
}
