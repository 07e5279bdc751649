use std::fs::File;
use std::path::{Path, PathBuf};

use clap::Args;
use histoseg::baselines::{multiband_threshold, run_kmeans_baseline, ClusterMode, ColorSpace};
use histoseg::data::{
    encode_image, histogram_normalize, labelmap_to_colors, load_dataset, Dataset, LabelMap,
    RgbImage,
};
use histoseg::metrics::{score_set, write_image_csv, ScoreRow, ScoreTable};
use histoseg::network::load_model_with_stats;
use histoseg::trainer::evaluate_model;

use super::synth::EVAL_DIR;
use super::{class_names, create_dir, emit_scores, resolve_dataset, rng_stream, streams};
use crate::{CliError, Context};

/// Options shared by the three scoring commands.
#[derive(Debug, Args)]
pub struct ScoreOutput {
    /// Labeled dataset, or a root whose eval/ subdirectory is used.
    #[arg(long)]
    pub data: PathBuf,
    /// Append the summary row to this CSV (header written when new).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write per-image scores to this CSV.
    #[arg(long)]
    pub per_image: Option<PathBuf>,
    /// Print a fixed-width table instead of CSV.
    #[arg(long)]
    pub pretty: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Row label in the output.
    #[arg(long, default_value = "cnn")]
    pub method: String,
    #[command(flatten)]
    pub output: ScoreOutput,
}

#[derive(Debug, Args)]
pub struct KmeansArgs {
    /// Feature space: rgb or lab.
    #[arg(long, default_value = "rgb")]
    pub space: String,
    /// Cluster each image separately (per-image) or all pixels at once (pooled).
    #[arg(long, default_value = "per-image")]
    pub mode: String,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Also write the relabeled cluster maps as color PNGs here.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[command(flatten)]
    pub output: ScoreOutput,
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    /// Also write the predicted maps as color PNGs here.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[command(flatten)]
    pub output: ScoreOutput,
}

fn load_scored(ctx: &Context<'_>, o: &ScoreOutput) -> Result<Dataset, CliError> {
    let dir = resolve_dataset(&o.data, EVAL_DIR)?;
    Ok(load_dataset(&dir, &ctx.config.colormap)?)
}

fn finish(
    ctx: &mut Context<'_>,
    o: &ScoreOutput,
    method: &str,
    table: &ScoreTable,
) -> Result<(), CliError> {
    let names = class_names(&ctx.config.colormap);
    let log = ctx.open_log(None)?;
    log.line(&format!(
        "{method}: mean DSC {:.6}, mean IoU {:.6}",
        table.mean_dsc, table.mean_iou
    ))?;
    emit_scores(
        ctx.out,
        &[ScoreRow { method, table }],
        &names,
        o.pretty,
        o.out.as_deref(),
    )?;
    if let Some(path) = &o.per_image {
        let f = File::create(path).map_err(|e| CliError::io(path, e))?;
        write_image_csv(f, table, &names)?;
    }
    Ok(())
}

fn write_predictions(
    dir: &Path,
    ds: &Dataset,
    preds: &[LabelMap],
    ctx: &Context<'_>,
) -> Result<(), CliError> {
    create_dir(dir)?;
    for (name, p) in ds.names.iter().zip(preds) {
        encode_image(
            &labelmap_to_colors(p, &ctx.config.colormap)?,
            &dir.join(format!("{name}.png")),
        )?;
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs, ctx: &mut Context<'_>) -> Result<ScoreTable, CliError> {
    ctx.config.validate()?;
    let saved = load_model_with_stats(&args.model)?;
    let stats = saved.stats.ok_or_else(|| {
        CliError::data(format!(
            "{}: model carries no input normalization",
            args.model.display()
        ))
    })?;
    if saved.network.class_count() != ctx.config.colormap.len() {
        return Err(CliError::usage(format!(
            "colormap has {} classes, model {}",
            ctx.config.colormap.len(),
            saved.network.class_count()
        )));
    }
    let ds = load_scored(ctx, &args.output)?;
    let table = evaluate_model(&saved.network, &ds.names, &ds.pairs, &stats)?;
    finish(ctx, &args.output, &args.method, &table)?;
    Ok(table)
}

fn normalized(ds: &Dataset) -> Vec<RgbImage> {
    ds.pairs
        .iter()
        .map(|(img, _)| histogram_normalize(img))
        .collect()
}

pub fn cmd_kmeans(args: &KmeansArgs, ctx: &mut Context<'_>) -> Result<ScoreTable, CliError> {
    if let Some(r) = args.restarts {
        ctx.config.kmeans.restarts = r;
    }
    ctx.config.kmeans.k = ctx.config.colormap.len();
    ctx.config.validate()?;
    let space: ColorSpace = args.space.parse().map_err(CliError::usage)?;
    let mode = match args.mode.as_str() {
        "per-image" | "per_image" => ClusterMode::PerImage,
        "pooled" => ClusterMode::Pooled,
        other => {
            return Err(CliError::usage(format!(
                "unknown mode {other:?}; expected per-image or pooled"
            )))
        }
    };
    let ds = load_scored(ctx, &args.output)?;
    let truths: Vec<LabelMap> = ds.pairs.iter().map(|p| p.1.clone()).collect();
    let mut rng = rng_stream(ctx.config.seed, streams::KMEANS);
    let outcome = run_kmeans_baseline(
        &ds.names,
        &normalized(&ds),
        &truths,
        space,
        mode,
        &ctx.config.kmeans,
        &mut rng,
    )?;
    if let Some(dir) = &args.predictions {
        write_predictions(dir, &ds, &outcome.predictions, ctx)?;
    }
    let method = match space {
        ColorSpace::Rgb => "kmeans_rgb",
        ColorSpace::Lab => "kmeans_lab",
    };
    finish(ctx, &args.output, method, &outcome.table)?;
    Ok(outcome.table)
}

pub fn cmd_threshold(args: &ThresholdArgs, ctx: &mut Context<'_>) -> Result<ScoreTable, CliError> {
    ctx.config.validate()?;
    let ds = load_scored(ctx, &args.output)?;
    let preds = normalized(&ds)
        .iter()
        .map(|img| multiband_threshold(img, &ctx.config.threshold))
        .collect::<Result<Vec<_>, _>>()?;
    let truths: Vec<LabelMap> = ds.pairs.iter().map(|p| p.1.clone()).collect();
    let table = score_set(&ds.names, &preds, &truths, ctx.config.colormap.len())?;
    if let Some(dir) = &args.predictions {
        write_predictions(dir, &ds, &preds, ctx)?;
    }
    finish(ctx, &args.output, "threshold", &table)?;
    Ok(table)
}
