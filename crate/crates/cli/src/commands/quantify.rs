use std::fs::File;
use std::path::{Path, PathBuf};

use clap::Args;
use histoseg::data::{decode_image, labelmap_from_colors, list_pngs, Colormap};
use histoseg::metrics::{class_area_fractions, welch_ttest, WelchResult};

use super::{create_dir, say};
use crate::{CliError, Context};

#[derive(Debug, Args)]
pub struct QuantifyArgs {
    /// Directory of color-coded segmentations for the first group.
    #[arg(long)]
    pub group_a: PathBuf,
    /// Directory of color-coded segmentations for the second group.
    #[arg(long)]
    pub group_b: PathBuf,
    #[arg(long, default_value = "a")]
    pub name_a: String,
    #[arg(long, default_value = "b")]
    pub name_b: String,
    /// Class whose area fraction is tested.
    #[arg(long, default_value = "fibrosis")]
    pub class: String,
    /// Also write fractions.csv and welch.csv here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupFractions {
    pub name: String,
    /// Image stem with its class-area fractions.
    pub images: Vec<(String, Vec<f64>)>,
    pub mean: Vec<f64>,
}

impl GroupFractions {
    pub fn class_values(&self, class: usize) -> Vec<f64> {
        self.images.iter().map(|(_, f)| f[class]).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantifyReport {
    pub groups: [GroupFractions; 2],
    pub class: usize,
    pub welch: WelchResult,
    /// Mean fraction of group b over group a.
    pub ratio: f64,
}

fn load_group(dir: &Path, name: &str, colormap: &Colormap) -> Result<GroupFractions, CliError> {
    let files = list_pngs(dir)?;
    if files.is_empty() {
        return Err(CliError::data(format!(
            "{}: no PNG segmentations",
            dir.display()
        )));
    }
    let k = colormap.len();
    let mut images = Vec::with_capacity(files.len());
    for (stem, path) in files {
        let lb = labelmap_from_colors(&decode_image(&path)?, colormap)?;
        images.push((stem, class_area_fractions(&lb, k)));
    }
    let n = images.len() as f64;
    let mean = (0..k)
        .map(|c| images.iter().map(|(_, f)| f[c]).sum::<f64>() / n)
        .collect();
    Ok(GroupFractions {
        name: name.to_string(),
        images,
        mean,
    })
}

pub fn cmd_quantify(
    args: &QuantifyArgs,
    ctx: &mut Context<'_>,
) -> Result<QuantifyReport, CliError> {
    ctx.config.validate()?;
    let colormap = ctx.config.colormap.clone();
    let names = colormap.names();
    let class = names.iter().position(|n| *n == args.class).ok_or_else(|| {
        CliError::usage(format!(
            "class {:?} is not in the colormap {names:?}",
            args.class
        ))
    })?;
    let a = load_group(&args.group_a, &args.name_a, &colormap)?;
    let b = load_group(&args.group_b, &args.name_b, &colormap)?;
    let welch = welch_ttest(&a.class_values(class), &b.class_values(class))?;
    let ratio = b.mean[class] / a.mean[class];
    let log = ctx.open_log(args.out.as_ref().map(|d| d.join("run.log")))?;

    let header: Vec<String> = ["group", "image"]
        .iter()
        .map(|s| s.to_string())
        .chain(names.iter().map(|n| n.to_string()))
        .collect();
    let mut rows = Vec::new();
    for g in [&a, &b] {
        for (stem, f) in &g.images {
            let mut r = vec![g.name.clone(), stem.clone()];
            r.extend(f.iter().map(|v| format!("{v:.6}")));
            rows.push(r);
        }
    }
    for g in [&a, &b] {
        let mut r = vec![g.name.clone(), "mean".into()];
        r.extend(g.mean.iter().map(|v| format!("{v:.6}")));
        rows.push(r);
    }
    let welch_header = [
        "class", "n_a", "n_b", "mean_a", "mean_b", "ratio", "t", "df", "p",
    ];
    let welch_row = vec![
        args.class.clone(),
        a.images.len().to_string(),
        b.images.len().to_string(),
        format!("{:.6}", a.mean[class]),
        format!("{:.6}", b.mean[class]),
        format!("{ratio:.6}"),
        format!("{:.9}", welch.t),
        format!("{:.9}", welch.df),
        format!("{:.6e}", welch.p),
    ];

    let mut w = csv::Writer::from_writer(&mut *ctx.out);
    w.write_record(&header)?;
    for r in &rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| CliError::data(e.to_string()))?;
    drop(w);
    say(ctx.out, "")?;
    let mut w = csv::Writer::from_writer(&mut *ctx.out);
    w.write_record(welch_header)?;
    w.write_record(&welch_row)?;
    w.flush().map_err(|e| CliError::data(e.to_string()))?;
    drop(w);

    if let Some(dir) = &args.out {
        create_dir(dir)?;
        let path = dir.join("fractions.csv");
        let mut w =
            csv::Writer::from_writer(File::create(&path).map_err(|e| CliError::io(&path, e))?);
        w.write_record(&header)?;
        for r in &rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        let path = dir.join("welch.csv");
        let mut w =
            csv::Writer::from_writer(File::create(&path).map_err(|e| CliError::io(&path, e))?);
        w.write_record(welch_header)?;
        w.write_record(&welch_row)?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
    }
    log.line(&format!(
        "{}: {} vs {}: ratio {ratio:.4}, t {:.6}, df {:.6}, p {:.3e}",
        args.class, a.name, b.name, welch.t, welch.df, welch.p
    ))?;
    Ok(QuantifyReport {
        groups: [a, b],
        class,
        welch,
        ratio,
    })
}
