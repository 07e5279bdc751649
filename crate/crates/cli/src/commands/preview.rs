use std::path::PathBuf;

use clap::Args;
use histoseg::data::{
    apply_transform, color_adjust, decode_image, encode_image, labelmap_from_colors,
    labelmap_to_colors, ColorChannel, LabelMap, TransformKind,
};

use super::{create_dir, say};
use crate::{CliError, Context};

#[derive(Debug, Args)]
pub struct PreviewArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Color-coded labels for the image; transformed alongside it.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Writes `original.png`, one PNG per geometric transform (plus
/// `<name>_labels.png` when labels are given) and the four color extremes.
pub fn cmd_augment_preview(
    args: &PreviewArgs,
    ctx: &mut Context<'_>,
) -> Result<Vec<PathBuf>, CliError> {
    ctx.config.validate()?;
    let img = decode_image(&args.image)?;
    let labels = match &args.labels {
        Some(p) => Some(labelmap_from_colors(
            &decode_image(p)?,
            &ctx.config.colormap,
        )?),
        None => None,
    };
    if let Some(lb) = &labels {
        if lb.dims() != img.dims() {
            return Err(CliError::data("labels and image differ in size"));
        }
    }
    create_dir(&args.out)?;
    let log = ctx.open_log(Some(args.out.join("run.log")))?;
    let cfg = &ctx.config;
    let mut written = Vec::new();
    let mut put = |name: String, im: &histoseg::data::RgbImage| -> Result<(), CliError> {
        let path = args.out.join(format!("{name}.png"));
        encode_image(im, &path)?;
        written.push(path);
        Ok(())
    };
    put("original".into(), &img)?;
    let blank = LabelMap::filled(img.height(), img.width(), 0)?;
    for kind in TransformKind::ALL {
        let t = cfg.augment.transform(kind);
        let (ti, tl) = apply_transform(&img, labels.as_ref().unwrap_or(&blank), &t)?;
        put(kind.name().to_string(), &ti)?;
        if labels.is_some() {
            put(
                format!("{}_labels", kind.name()),
                &labelmap_to_colors(&tl, &cfg.colormap)?,
            )?;
        }
    }
    for (channel, cname) in [(ColorChannel::Red, "red"), (ColorChannel::Blue, "blue")] {
        for (sign, sname) in [(1.0, "plus"), (-1.0, "minus")] {
            let limits = histoseg::data::ColorLimits {
                gain: cfg.color_limits.gain,
                offset: sign * cfg.color_limits.offset,
            };
            put(
                format!("color_{cname}_{sname}"),
                &color_adjust(&img, channel, 1.0, &limits),
            )?;
        }
    }
    log.line(&format!("wrote {} previews", written.len()))?;
    say(
        ctx.out,
        format!("wrote {} previews to {}", written.len(), args.out.display()),
    )?;
    Ok(written)
}
