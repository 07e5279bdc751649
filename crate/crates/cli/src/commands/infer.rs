use std::collections::BTreeSet;
use std::fs::File;
use std::path::PathBuf;

use clap::Args;
use histoseg::data::{decode_image, encode_image, labelmap_to_colors, list_pngs, IMAGES_DIR};
use histoseg::metrics::class_area_fractions;
use histoseg::network::{load_model_with_stats, ArchManifest};
use histoseg::trainer::predict_labels;

use super::{class_names, create_dir};
use crate::{CliError, Context};

pub const FRACTIONS_FILE: &str = "fractions.csv";

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Directory for the colored segmentations and fractions.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// PNG files, directories of PNGs, or dataset directories.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferReport {
    /// Image stem and its predicted class-area fractions.
    pub images: Vec<(String, Vec<f64>)>,
}

/// Side length of the input window that influences one output pixel.
pub fn receptive_field(manifest: &ArchManifest) -> usize {
    1 + manifest
        .layers
        .iter()
        .map(|l| l.kernel_h - 1)
        .sum::<usize>()
}

fn collect_inputs(inputs: &[PathBuf]) -> Result<Vec<(String, PathBuf)>, CliError> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let dir = if p.join(IMAGES_DIR).is_dir() {
                p.join(IMAGES_DIR)
            } else {
                p.clone()
            };
            out.extend(list_pngs(&dir)?);
        } else {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .ok_or_else(|| CliError::usage(format!("{}: not a file name", p.display())))?;
            out.push((stem, p.clone()));
        }
    }
    let mut seen = BTreeSet::new();
    for (stem, path) in &out {
        if !seen.insert(stem.clone()) {
            return Err(CliError::usage(format!(
                "{}: output name {stem}.png would be written twice",
                path.display()
            )));
        }
    }
    if out.is_empty() {
        return Err(CliError::data("no PNG inputs found"));
    }
    Ok(out)
}

fn write_rows<W: std::io::Write>(
    out: W,
    header: &[String],
    rows: &[Vec<String>],
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| CliError::data(e.to_string()))
}

pub fn cmd_infer(args: &InferArgs, ctx: &mut Context<'_>) -> Result<InferReport, CliError> {
    ctx.config.validate()?;
    let saved = load_model_with_stats(&args.model)?;
    let stats = saved.stats.ok_or_else(|| {
        CliError::data(format!(
            "{}: model carries no input normalization",
            args.model.display()
        ))
    })?;
    let net = saved.network;
    let colormap = &ctx.config.colormap;
    if colormap.len() != net.class_count() {
        return Err(CliError::usage(format!(
            "colormap has {} classes, model {}",
            colormap.len(),
            net.class_count()
        )));
    }
    let inputs = collect_inputs(&args.inputs)?;
    create_dir(&args.out)?;
    let log = ctx.open_log(Some(args.out.join("run.log")))?;
    let min_side = receptive_field(net.manifest());
    let names = class_names(colormap);
    let mut report = InferReport { images: Vec::new() };
    for (stem, path) in &inputs {
        let img = decode_image(path)?;
        if img.height() < min_side || img.width() < min_side {
            return Err(CliError::data(format!(
                "{}: {}x{} is smaller than the {min_side}-pixel receptive field",
                path.display(),
                img.width(),
                img.height()
            )));
        }
        let pred = predict_labels(&net, &img, &stats)?;
        encode_image(
            &labelmap_to_colors(&pred, colormap)?,
            &args.out.join(format!("{stem}.png")),
        )?;
        let f = class_area_fractions(&pred, colormap.len());
        log.line(&format!("{stem}: {}", super::fmt_fractions(&f)))?;
        report.images.push((stem.clone(), f));
    }
    let header: Vec<String> = std::iter::once("image".to_string())
        .chain(names.iter().map(|n| n.to_string()))
        .collect();
    let rows: Vec<Vec<String>> = report
        .images
        .iter()
        .map(|(stem, f)| {
            std::iter::once(stem.clone())
                .chain(f.iter().map(|v| format!("{v:.6}")))
                .collect()
        })
        .collect();
    let path = args.out.join(FRACTIONS_FILE);
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    write_rows(file, &header, &rows)?;
    write_rows(&mut *ctx.out, &header, &rows)?;
    Ok(report)
}
