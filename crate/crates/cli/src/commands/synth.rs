use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use histoseg::data::{class_fractions, synth_generate, write_dataset, SynthParams};
use serde::Serialize;

use super::{create_dir, fmt_fractions, parse_dims, parse_fractions, say, write_file};
use crate::{CliError, Context};

pub const TRAIN_DIR: &str = "train";
pub const EVAL_DIR: &str = "eval";
pub const MANIFEST: &str = "manifest.toml";

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; receives train/, eval/ and manifest.toml.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: Option<usize>,
    /// Image size as WIDTHxHEIGHT.
    #[arg(long, value_name = "WxH", value_parser = parse_dims)]
    pub dims: Option<(usize, usize)>,
    /// Images placed in eval/ (default: a third of --count).
    #[arg(long)]
    pub eval_count: Option<usize>,
    /// Class fractions myocyte,background,fibrosis.
    #[arg(long, value_parser = parse_fractions)]
    pub fractions: Option<[f64; 3]>,
    /// Per-pixel noise standard deviation.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Relative per-image perturbation of the fractions.
    #[arg(long)]
    pub fraction_spread: Option<f64>,
    /// Replace the contents of a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    seed: u64,
    count: usize,
    train_count: usize,
    eval_count: usize,
    width: usize,
    height: usize,
    train: &'a [String],
    eval: &'a [String],
    synth: &'a SynthParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthReport {
    pub train: Vec<String>,
    pub eval: Vec<String>,
    /// Pooled class fractions over every generated image.
    pub fractions: Vec<f64>,
}

fn clear_outputs(out: &Path) -> Result<(), CliError> {
    for name in [TRAIN_DIR, EVAL_DIR] {
        let p = out.join(name);
        if p.exists() {
            fs::remove_dir_all(&p).map_err(|e| CliError::io(&p, e))?;
        }
    }
    for name in [MANIFEST, "run.log"] {
        let p = out.join(name);
        if p.exists() {
            fs::remove_file(&p).map_err(|e| CliError::io(&p, e))?;
        }
    }
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs, ctx: &mut Context<'_>) -> Result<SynthReport, CliError> {
    let cfg = &mut ctx.config;
    if let Some(n) = args.count {
        cfg.dataset.count = n;
    }
    if let Some((w, h)) = args.dims {
        cfg.dataset.width = w;
        cfg.dataset.height = h;
    }
    if let Some(n) = args.eval_count {
        cfg.dataset.eval_count = Some(n);
    }
    if let Some(f) = args.fractions {
        cfg.synth.fractions = f;
    }
    if let Some(n) = args.noise {
        cfg.synth.noise = n;
    }
    if let Some(s) = args.fraction_spread {
        cfg.synth.fraction_spread = s;
    }
    cfg.synth.seed = cfg.seed;
    cfg.validate()?;
    let layout = cfg.dataset.clone();
    let n_eval = layout.eval_images();
    if layout.count == 0 || n_eval > layout.count {
        return Err(CliError::usage(format!(
            "cannot split {} images into {n_eval} for evaluation",
            layout.count
        )));
    }
    let nonempty = fs::read_dir(&args.out)
        .map(|mut d| d.next().is_some())
        .unwrap_or(false);
    if nonempty {
        if !args.force {
            return Err(CliError::data(format!(
                "{} exists and is not empty; pass --force to replace it",
                args.out.display()
            )));
        }
        clear_outputs(&args.out)?;
    }
    create_dir(&args.out)?;
    let log = ctx.open_log(Some(args.out.join("run.log")))?;
    let cfg = &ctx.config;

    let pairs = synth_generate(&cfg.synth, layout.count, (layout.height, layout.width))?;
    let names: Vec<String> = (0..layout.count).map(|i| format!("img_{i:04}")).collect();
    let n_train = layout.count - n_eval;
    let (train_names, eval_names) = names.split_at(n_train);
    write_dataset(
        &args.out.join(TRAIN_DIR),
        train_names,
        &pairs[..n_train],
        &cfg.colormap,
    )?;
    if n_eval > 0 {
        write_dataset(
            &args.out.join(EVAL_DIR),
            eval_names,
            &pairs[n_train..],
            &cfg.colormap,
        )?;
    }
    let manifest = Manifest {
        seed: cfg.seed,
        count: layout.count,
        train_count: n_train,
        eval_count: n_eval,
        width: layout.width,
        height: layout.height,
        train: train_names,
        eval: eval_names,
        synth: &cfg.synth,
    };
    let text = toml::to_string(&manifest).map_err(|e| CliError::data(e.to_string()))?;
    write_file(&args.out.join(MANIFEST), text.as_bytes())?;

    let k = cfg.colormap.len();
    let mut pooled = vec![0.0; k];
    for (_, lb) in &pairs {
        for (p, f) in pooled.iter_mut().zip(class_fractions(lb, k)) {
            *p += f / pairs.len() as f64;
        }
    }
    let summary = format!(
        "wrote {n_train} train and {n_eval} eval pairs of {}x{} to {} (seed {}); class fractions {}",
        layout.width,
        layout.height,
        args.out.display(),
        cfg.seed,
        fmt_fractions(&pooled)
    );
    log.line(&summary)?;
    say(ctx.out, &summary)?;
    Ok(SynthReport {
        train: train_names.to_vec(),
        eval: eval_names.to_vec(),
        fractions: pooled,
    })
}
