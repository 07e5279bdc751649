use rayon::prelude::*;
use serde::Serialize;

use super::{confusion, ConfusionMatrix, MetricsError};
use crate::data::LabelMap;

fn ratio(num: u64, den: u64) -> f64 {
    // A class absent from both maps scores 1.
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// `2 TP / (2 TP + FP + FN)` per class.
pub fn dsc_per_class(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.classes())
        .map(|c| {
            let tp = cm.tp(c);
            ratio(2 * tp, 2 * tp + cm.fp(c) + cm.fn_(c))
        })
        .collect()
}

/// `TP / (TP + FP + FN)` per class.
pub fn iou_per_class(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.classes())
        .map(|c| {
            let tp = cm.tp(c);
            ratio(tp, tp + cm.fp(c) + cm.fn_(c))
        })
        .collect()
}

pub fn dsc_from_iou(iou: f64) -> f64 {
    2.0 * iou / (1.0 + iou)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageScores {
    pub name: String,
    pub dsc: Vec<f64>,
    pub iou: Vec<f64>,
}

impl ImageScores {
    pub fn from_confusion(name: impl Into<String>, cm: &ConfusionMatrix) -> Self {
        Self {
            name: name.into(),
            dsc: dsc_per_class(cm),
            iou: iou_per_class(cm),
        }
    }

    /// Unweighted mean over classes.
    pub fn mean_dsc(&self) -> f64 {
        mean(&self.dsc)
    }

    pub fn mean_iou(&self) -> f64 {
        mean(&self.iou)
    }
}

/// Per-image scores plus set-level means. Each set mean is the unweighted
/// mean of the corresponding image-level values.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreTable {
    pub images: Vec<ImageScores>,
    pub mean_dsc: f64,
    pub class_dsc: Vec<f64>,
    pub mean_iou: f64,
    pub class_iou: Vec<f64>,
}

pub fn aggregate(images: Vec<ImageScores>) -> Result<ScoreTable, MetricsError> {
    let first = images.first().ok_or(MetricsError::Empty)?;
    let k = first.dsc.len();
    for (index, s) in images.iter().enumerate() {
        for actual in [s.dsc.len(), s.iou.len()] {
            if actual != k || k == 0 {
                return Err(MetricsError::ClassCount {
                    index,
                    expected: k,
                    actual,
                });
            }
        }
    }
    let column = |get: &dyn Fn(&ImageScores) -> &Vec<f64>, c: usize| {
        mean(&images.iter().map(|s| get(s)[c]).collect::<Vec<_>>())
    };
    let class_dsc = (0..k).map(|c| column(&|s| &s.dsc, c)).collect();
    let class_iou = (0..k).map(|c| column(&|s| &s.iou, c)).collect();
    let mean_dsc = mean(&images.iter().map(ImageScores::mean_dsc).collect::<Vec<_>>());
    let mean_iou = mean(&images.iter().map(ImageScores::mean_iou).collect::<Vec<_>>());
    Ok(ScoreTable {
        images,
        mean_dsc,
        class_dsc,
        mean_iou,
        class_iou,
    })
}

pub fn score_image(
    name: impl Into<String>,
    pred: &LabelMap,
    truth: &LabelMap,
    k: usize,
) -> Result<ImageScores, MetricsError> {
    Ok(ImageScores::from_confusion(
        name,
        &confusion(pred, truth, k)?,
    ))
}

/// Scores a whole set; images are processed in parallel, results kept in
/// input order.
pub fn score_set(
    names: &[String],
    preds: &[LabelMap],
    truths: &[LabelMap],
    k: usize,
) -> Result<ScoreTable, MetricsError> {
    if preds.len() != truths.len() || names.len() != truths.len() {
        return Err(MetricsError::SetMismatch(preds.len(), truths.len()));
    }
    let scores = names
        .par_iter()
        .zip(preds.par_iter().zip(truths))
        .map(|(n, (p, t))| score_image(n.clone(), p, t, k))
        .collect::<Result<Vec<_>, _>>()?;
    aggregate(scores)
}

/// Pixel share of each class.
pub fn class_area_fractions(lm: &LabelMap, k: usize) -> Vec<f64> {
    let counts = lm.class_counts(k);
    let total = lm.as_slice().len() as f64;
    counts.iter().map(|&c| c as f64 / total).collect()
}
