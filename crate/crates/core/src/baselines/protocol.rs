use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{kmeans, rgb_to_lab, BaselineError, KmeansConfig};
use crate::data::{LabelMap, RgbImage};
use crate::metrics::{confusion, dsc_per_class, ConfusionMatrix, ImageScores, ScoreTable};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorSpace {
    #[default]
    Rgb,
    Lab,
}

impl std::str::FromStr for ColorSpace {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rgb" => Ok(ColorSpace::Rgb),
            "lab" => Ok(ColorSpace::Lab),
            other => Err(format!(
                "unknown color space {other:?}; expected rgb or lab"
            )),
        }
    }
}

/// Whether each image is clustered on its own or all pixels together.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMode {
    #[default]
    PerImage,
    Pooled,
}

pub fn image_features(img: &RgbImage, space: ColorSpace) -> Vec<[f64; 3]> {
    match space {
        ColorSpace::Rgb => img.pixels().map(|p| p.map(f64::from)).collect(),
        ColorSpace::Lab => rgb_to_lab(img),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PermutationMatch {
    /// `perm[cluster]` is the class assigned to that cluster.
    pub perm: Vec<usize>,
    pub mean_dsc: f64,
    /// Set mean DSC of every permutation, in lexicographic order.
    pub candidates: Vec<(Vec<usize>, f64)>,
    pub relabeled: Vec<LabelMap>,
}

fn set_mean_dsc(cms: &[ConfusionMatrix]) -> f64 {
    let per_image: Vec<f64> = cms
        .iter()
        .map(|cm| {
            let d = dsc_per_class(cm);
            d.iter().sum::<f64>() / d.len() as f64
        })
        .collect();
    per_image.iter().sum::<f64>() / per_image.len() as f64
}

/// Tries every cluster-to-class relabeling and keeps the one with the
/// highest set mean DSC; ties go to the lexicographically first.
pub fn match_permutation(
    assignments: &[LabelMap],
    truths: &[LabelMap],
    k: usize,
) -> Result<PermutationMatch, BaselineError> {
    if k > 6 {
        return Err(BaselineError::TooManyClasses(k));
    }
    if assignments.is_empty() || assignments.len() != truths.len() {
        return Err(BaselineError::InvalidConfig(format!(
            "{} cluster maps for {} truths",
            assignments.len(),
            truths.len()
        )));
    }
    let cms = assignments
        .iter()
        .zip(truths)
        .map(|(a, t)| confusion(a, t, k))
        .collect::<Result<Vec<_>, _>>()?;
    let candidates: Vec<(Vec<usize>, f64)> = (0..k)
        .permutations(k)
        .map(|perm| {
            let permuted: Vec<ConfusionMatrix> =
                cms.iter().map(|cm| cm.permute_predictions(&perm)).collect();
            let score = set_mean_dsc(&permuted);
            (perm, score)
        })
        .collect();
    let (perm, mean_dsc) = candidates
        .iter()
        .fold(None::<&(Vec<usize>, f64)>, |best, c| match best {
            Some(b) if b.1 >= c.1 => Some(b),
            _ => Some(c),
        })
        .cloned()
        .expect("k! >= 1");
    let relabeled = assignments
        .iter()
        .map(|a| {
            let classes = a
                .as_slice()
                .iter()
                .map(|&c| perm[c as usize] as u8)
                .collect();
            LabelMap::new(a.height(), a.width(), classes)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PermutationMatch {
        perm,
        mean_dsc,
        candidates,
        relabeled,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineOutcome {
    pub table: ScoreTable,
    pub predictions: Vec<LabelMap>,
    pub permutation: Vec<usize>,
}

/// Clusters each image's colors (or all pixels together in pooled mode),
/// picks one relabeling for the whole set, and scores it.
pub fn run_kmeans_baseline(
    names: &[String],
    images: &[RgbImage],
    truths: &[LabelMap],
    space: ColorSpace,
    mode: ClusterMode,
    cfg: &KmeansConfig,
    rng: &mut impl Rng,
) -> Result<BaselineOutcome, BaselineError> {
    if images.is_empty() || images.len() != truths.len() || names.len() != images.len() {
        return Err(BaselineError::InvalidConfig(format!(
            "{} images, {} truths, {} names",
            images.len(),
            truths.len(),
            names.len()
        )));
    }
    let to_map = |img: &RgbImage, a: Vec<u8>| LabelMap::new(img.height(), img.width(), a);
    let clusters: Vec<LabelMap> = match mode {
        ClusterMode::PerImage => {
            let seeds: Vec<u64> = images.iter().map(|_| rng.gen()).collect();
            images
                .par_iter()
                .zip(seeds)
                .map(|(img, seed)| {
                    let feats = image_features(img, space);
                    let r = kmeans(&feats, cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
                    Ok(to_map(img, r.assignments)?)
                })
                .collect::<Result<Vec<_>, BaselineError>>()?
        }
        ClusterMode::Pooled => {
            let feats: Vec<[f64; 3]> = images
                .iter()
                .flat_map(|i| image_features(i, space))
                .collect();
            let mut all = kmeans(&feats, cfg, rng)?.assignments.into_iter();
            images
                .iter()
                .map(|img| to_map(img, all.by_ref().take(img.height() * img.width()).collect()))
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    let matched = match_permutation(&clusters, truths, cfg.k)?;
    let scores = names
        .iter()
        .zip(matched.relabeled.iter().zip(truths))
        .map(|(n, (p, t))| {
            Ok(ImageScores::from_confusion(
                n.clone(),
                &confusion(p, t, cfg.k)?,
            ))
        })
        .collect::<Result<Vec<_>, BaselineError>>()?;
    Ok(BaselineOutcome {
        table: crate::metrics::aggregate(scores)?,
        predictions: matched.relabeled,
        permutation: matched.perm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthParams};

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("img{i}")).collect()
    }

    #[test]
    fn identity_when_already_aligned() {
        let t = vec![LabelMap::new(1, 6, vec![0, 1, 2, 2, 1, 0]).unwrap()];
        let m = match_permutation(&t, &t, 3).unwrap();
        assert_eq!(m.perm, vec![0, 1, 2]);
        assert_eq!(m.mean_dsc, 1.0);
    }

    #[test]
    fn swapped_labels_are_swapped_back() {
        let truth = vec![LabelMap::new(1, 6, vec![0, 0, 1, 1, 2, 2]).unwrap()];
        let swapped = vec![LabelMap::new(1, 6, vec![1, 1, 0, 0, 2, 2]).unwrap()];
        let m = match_permutation(&swapped, &truth, 3).unwrap();
        assert_eq!(m.perm, vec![1, 0, 2]);
        assert_eq!(m.relabeled, truth);
        assert_eq!(m.candidates.len(), 6);
        assert!(m.candidates.iter().all(|(_, s)| *s <= m.mean_dsc));
        assert!(match_permutation(&swapped, &truth, 7).is_err());
    }

    #[test]
    fn separable_synthetic_set_is_recovered() {
        let params = SynthParams {
            jitter: 0.0,
            noise: 0.0,
            texture: 0.0,
            ..SynthParams::default()
        };
        let data = synth_generate(&params, 3, (64, 64)).unwrap();
        let (imgs, truths): (Vec<_>, Vec<_>) = data.into_iter().unzip();
        for space in [ColorSpace::Rgb, ColorSpace::Lab] {
            for mode in [ClusterMode::PerImage, ClusterMode::Pooled] {
                let out = run_kmeans_baseline(
                    &names(3),
                    &imgs,
                    &truths,
                    space,
                    mode,
                    &KmeansConfig::default(),
                    &mut ChaCha8Rng::seed_from_u64(4),
                )
                .unwrap();
                assert!(
                    out.table.mean_dsc > 0.99,
                    "{space:?} {mode:?}: {}",
                    out.table.mean_dsc
                );
            }
        }
    }

    #[test]
    fn translation_does_not_change_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<[f64; 3]> = (0..600)
            .map(|i| {
                let c = (i % 3) as f64 * 6.0;
                [c + rng.gen::<f64>(), rng.gen::<f64>(), c + rng.gen::<f64>()]
            })
            .collect();
        let moved: Vec<[f64; 3]> = pts
            .iter()
            .map(|p| [p[0] + 64.0, p[1] - 32.0, p[2] + 128.0])
            .collect();
        let cfg = KmeansConfig::default();
        let a = kmeans(&pts, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = kmeans(&moved, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a.assignments, b.assignments);
    }
}
