use std::path::PathBuf;

use clap::Args;
use histoseg::network::{ArchManifest, ParamCount};

use super::{parse_dims, say};
use crate::{CliError, Context};

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// TOML architecture manifest (default: the 11-layer network).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Additional 3x3 64-channel layers.
    #[arg(long, default_value_t = 0)]
    pub extra_layers: usize,
    /// Input size as WIDTHxHEIGHT.
    #[arg(long, value_name = "WxH", value_parser = parse_dims, default_value = "2064x1536")]
    pub dims: (usize, usize),
    /// Print per-layer rows and thousands separators.
    #[arg(long)]
    pub pretty: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyzeReport {
    pub manifest: ArchManifest,
    pub params: ParamCount,
    pub macs: u64,
    pub dims: (usize, usize),
}

fn grouped(v: u64) -> String {
    let s = v.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

pub fn cmd_analyze(args: &AnalyzeArgs, ctx: &mut Context<'_>) -> Result<AnalyzeReport, CliError> {
    let base = match &args.manifest {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            toml::from_str::<ArchManifest>(&text)
                .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?
        }
        None => ArchManifest::with_classes(ctx.config.colormap.len()),
    };
    let manifest = base.with_extra_layers(args.extra_layers);
    manifest
        .validate()
        .map_err(|e| CliError::data(e.to_string()))?;
    let (w, h) = args.dims;
    let params = manifest.count_parameters();
    let macs = manifest.count_macs(h, w);
    let log = ctx.open_log(None)?;
    log.line(&format!(
        "conv {} bn {} macs {macs}",
        params.conv_weights, params.bn_params
    ))?;
    if args.pretty {
        say(ctx.out, "layer  kernel  c_in  c_out  weights")?;
        for (i, l) in manifest.layers.iter().enumerate() {
            say(
                ctx.out,
                format!(
                    "{:>5}  {}x{}  {:>6}  {:>5}  {:>7}",
                    i + 1,
                    l.kernel_h,
                    l.kernel_w,
                    l.c_in,
                    l.c_out,
                    grouped(l.conv_weights())
                ),
            )?;
        }
        say(
            ctx.out,
            format!("conv weights      {}", grouped(params.conv_weights)),
        )?;
        say(
            ctx.out,
            format!("batch-norm params {}", grouped(params.bn_params)),
        )?;
        say(
            ctx.out,
            format!("total params      {}", grouped(params.total)),
        )?;
        say(ctx.out, format!("MACs at {w}x{h}   {}", grouped(macs)))?;
    } else {
        say(ctx.out, "quantity,value")?;
        say(ctx.out, format!("layers,{}", manifest.layers.len()))?;
        say(ctx.out, format!("conv_weights,{}", params.conv_weights))?;
        say(ctx.out, format!("bn_params,{}", params.bn_params))?;
        say(ctx.out, format!("total_params,{}", params.total))?;
        say(ctx.out, format!("width,{w}"))?;
        say(ctx.out, format!("height,{h}"))?;
        say(ctx.out, format!("macs,{macs}"))?;
    }
    Ok(AnalyzeReport {
        manifest,
        params,
        macs,
        dims: args.dims,
    })
}
