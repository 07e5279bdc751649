//! Dataset directories: `images/<stem>.png` with ground truth in
//! `labels/<stem>.png`, color coded by a [`Colormap`].

use std::fs;
use std::path::{Path, PathBuf};

use super::{
    decode_image, encode_image, labelmap_from_colors, labelmap_to_colors, Colormap, DataError,
    LabelMap, RgbImage,
};

pub const IMAGES_DIR: &str = "images";
pub const LABELS_DIR: &str = "labels";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairPaths {
    pub stem: String,
    pub image: PathBuf,
    pub labels: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub pairs: Vec<(RgbImage, LabelMap)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// PNG files in a directory, sorted by stem.
pub fn list_pngs(dir: &Path) -> Result<Vec<(String, PathBuf)>, DataError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            out.push((stem, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Every image with its label file, if present.
pub fn list_pairs(dir: &Path) -> Result<Vec<PairPaths>, DataError> {
    let images = dir.join(IMAGES_DIR);
    if !images.is_dir() {
        return Err(DataError::Layout {
            path: dir.to_path_buf(),
            detail: format!("missing {IMAGES_DIR}/ directory"),
        });
    }
    let labels = dir.join(LABELS_DIR);
    Ok(list_pngs(&images)?
        .into_iter()
        .map(|(stem, image)| {
            let l = labels.join(format!("{stem}.png"));
            PairPaths {
                labels: l.is_file().then_some(l),
                stem,
                image,
            }
        })
        .collect())
}

/// Loads every pair; a missing or mismatched label file is an error.
pub fn load_dataset(dir: &Path, colormap: &Colormap) -> Result<Dataset, DataError> {
    let listed = list_pairs(dir)?;
    if listed.is_empty() {
        return Err(DataError::Layout {
            path: dir.join(IMAGES_DIR),
            detail: "no PNG images".into(),
        });
    }
    let mut names = Vec::with_capacity(listed.len());
    let mut pairs = Vec::with_capacity(listed.len());
    for p in listed {
        let label_path = p.labels.ok_or_else(|| DataError::Layout {
            path: p.image.clone(),
            detail: format!("no matching {LABELS_DIR}/{}.png", p.stem),
        })?;
        let img = decode_image(&p.image)?;
        let lb = labelmap_from_colors(&decode_image(&label_path)?, colormap)?;
        if lb.dims() != img.dims() {
            return Err(DataError::Layout {
                path: label_path,
                detail: format!(
                    "labels are {}x{} but the image is {}x{}",
                    lb.height(),
                    lb.width(),
                    img.height(),
                    img.width()
                ),
            });
        }
        names.push(p.stem);
        pairs.push((img, lb));
    }
    Ok(Dataset { names, pairs })
}

pub fn write_dataset(
    dir: &Path,
    names: &[String],
    pairs: &[(RgbImage, LabelMap)],
    colormap: &Colormap,
) -> Result<(), DataError> {
    if names.len() != pairs.len() {
        return Err(DataError::InvalidConfig(format!(
            "{} names for {} pairs",
            names.len(),
            pairs.len()
        )));
    }
    let images = dir.join(IMAGES_DIR);
    let labels = dir.join(LABELS_DIR);
    fs::create_dir_all(&images).map_err(io_err(&images))?;
    fs::create_dir_all(&labels).map_err(io_err(&labels))?;
    for (name, (img, lb)) in names.iter().zip(pairs) {
        encode_image(img, &images.join(format!("{name}.png")))?;
        encode_image(
            &labelmap_to_colors(lb, colormap)?,
            &labels.join(format!("{name}.png")),
        )?;
    }
    Ok(())
}
