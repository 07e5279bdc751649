//! Augmented patch pools.
//!
//! Building happens in two passes so that full-size corpora never hold
//! every augmented image at once. The first pass transforms only label maps,
//! draws patch corners and scores each candidate; the pooled candidates are
//! then filtered, trimmed and shuffled; the second pass re-applies each
//! transform once and crops the surviving patches.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    apply_transform, color_adjust, transform_labels, ColorChannel, ColorLimits, DataError,
    LabelMap, RgbImage, Transform, TransformKind,
};

/// Pooled class fractions aimed for by the balanced builder.
pub const BALANCE_TARGET: [f64; 3] = [0.35, 0.34, 0.31];
/// Allowed deviation per class, as a fraction.
pub const BALANCE_TOLERANCE: f64 = 0.02;

const BALANCE_PROPOSALS: usize = 16;
const MAX_QUOTA: usize = 900;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPlan {
    pub rot90: usize,
    pub rot180: usize,
    pub rot270: usize,
    pub flip_h: usize,
    pub flip_v: usize,
    pub warp: usize,
    pub shear: usize,
    pub patch_size: usize,
    /// Excluded share of the raw pool, as `[numerator, denominator]`.
    pub exclusion: [usize; 2],
    pub batch_size: usize,
    pub warp_amplitude: f64,
    pub warp_wavelength: f64,
    pub shear_factor: f64,
    pub classes: usize,
}

impl Default for AugmentPlan {
    fn default() -> Self {
        Self {
            rot90: 450,
            rot180: 900,
            rot270: 450,
            flip_h: 450,
            flip_v: 450,
            warp: 900,
            shear: 900,
            patch_size: 48,
            exclusion: [4, 9],
            batch_size: 128,
            warp_amplitude: 8.0,
            warp_wavelength: 96.0,
            shear_factor: 0.2,
            classes: 3,
        }
    }
}

impl AugmentPlan {
    pub fn quota(&self, kind: TransformKind) -> usize {
        match kind {
            TransformKind::Rot90 => self.rot90,
            TransformKind::Rot180 => self.rot180,
            TransformKind::Rot270 => self.rot270,
            TransformKind::FlipH => self.flip_h,
            TransformKind::FlipV => self.flip_v,
            TransformKind::Warp => self.warp,
            TransformKind::Shear => self.shear,
        }
    }

    pub fn set_quota(&mut self, kind: TransformKind, n: usize) {
        let slot = match kind {
            TransformKind::Rot90 => &mut self.rot90,
            TransformKind::Rot180 => &mut self.rot180,
            TransformKind::Rot270 => &mut self.rot270,
            TransformKind::FlipH => &mut self.flip_h,
            TransformKind::FlipV => &mut self.flip_v,
            TransformKind::Warp => &mut self.warp,
            TransformKind::Shear => &mut self.shear,
        };
        *slot = n;
    }

    pub fn transform(&self, kind: TransformKind) -> Transform {
        match kind {
            TransformKind::Rot90 => Transform::Rot90,
            TransformKind::Rot180 => Transform::Rot180,
            TransformKind::Rot270 => Transform::Rot270,
            TransformKind::FlipH => Transform::FlipH,
            TransformKind::FlipV => Transform::FlipV,
            TransformKind::Warp => Transform::Warp {
                amplitude: self.warp_amplitude,
                wavelength: self.warp_wavelength,
            },
            TransformKind::Shear => Transform::Shear {
                factor: self.shear_factor,
            },
        }
    }

    pub fn raw_per_image(&self) -> usize {
        TransformKind::ALL.iter().map(|&k| self.quota(k)).sum()
    }

    /// Number of raw patches dropped by the homogeneity filter.
    pub fn excluded_of(&self, raw: usize) -> usize {
        raw * self.exclusion[0] / self.exclusion[1]
    }

    /// Patch count produced from `images` images, before any build runs.
    pub fn expected_count(&self, images: usize) -> usize {
        let raw = images * self.raw_per_image();
        let kept = raw - self.excluded_of(raw);
        kept - kept % self.batch_size
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::InvalidConfig(msg));
        for k in TransformKind::ALL {
            if self.quota(k) > MAX_QUOTA {
                return bad(format!("{k} quota {} exceeds {MAX_QUOTA}", self.quota(k)));
            }
        }
        if self.raw_per_image() == 0 {
            return bad("every transform quota is zero".into());
        }
        if self.patch_size == 0 || self.batch_size == 0 {
            return bad("patch and batch sizes must be positive".into());
        }
        let [num, den] = self.exclusion;
        if den == 0 || num >= den {
            return bad(format!("exclusion fraction {num}/{den} must lie in [0, 1)"));
        }
        if !(2..=u8::MAX as usize).contains(&self.classes) {
            return bad(format!("{} classes", self.classes));
        }
        let finite = [self.warp_amplitude, self.warp_wavelength, self.shear_factor];
        if finite.iter().any(|v| !v.is_finite()) || self.warp_wavelength <= 0.0 {
            return bad("warp and shear parameters must be finite, wavelength positive".into());
        }
        Ok(())
    }
}

/// An aligned image/label crop.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub image: RgbImage,
    pub labels: LabelMap,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BuildReport {
    pub images: usize,
    pub raw: usize,
    pub excluded: usize,
    pub discarded: usize,
    pub count: usize,
    pub batches: usize,
    /// Largest class-proportion SD among retained candidates.
    pub max_kept_sd: f64,
    /// Smallest class-proportion SD among excluded candidates.
    pub min_excluded_sd: Option<f64>,
    pub class_fractions: Vec<f64>,
    pub oversampled: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    pub patches: Vec<Patch>,
    pub batch_size: usize,
    pub report: BuildReport,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn batch_count(&self) -> usize {
        self.patches.len() / self.batch_size
    }

    pub fn batches(&self) -> std::slice::Chunks<'_, Patch> {
        self.patches.chunks(self.batch_size)
    }

    pub fn shuffle(&mut self, rng: &mut impl Rng) {
        self.patches.shuffle(rng);
    }

    /// Pooled class fractions over every patch pixel.
    pub fn class_fractions(&self, classes: usize) -> Vec<f64> {
        let mut counts = vec![0u64; classes];
        for p in &self.patches {
            for (c, n) in counts.iter_mut().zip(p.labels.class_counts(classes)) {
                *c += n;
            }
        }
        normalize_counts(&counts)
    }
}

fn normalize_counts(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    counts
        .iter()
        .map(|&c| c as f64 / total.max(1) as f64)
        .collect()
}

/// Fraction of pixels per class for indices below `classes`.
pub fn class_fractions(labels: &LabelMap, classes: usize) -> Vec<f64> {
    let n = labels.as_slice().len() as f64;
    labels
        .class_counts(classes)
        .iter()
        .map(|&c| c as f64 / n)
        .collect()
}

fn population_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Population standard deviation of the per-class pixel fractions.
pub fn class_proportion_sd(labels: &LabelMap, classes: usize) -> f64 {
    population_sd(&class_fractions(labels, classes))
}

fn random_corner(rng: &mut impl Rng, h: usize, w: usize, size: usize) -> (usize, usize) {
    (rng.gen_range(0..=h - size), rng.gen_range(0..=w - size))
}

/// `count` uniformly placed, possibly overlapping `size x size` crops.
pub fn sample_patches(
    img: &RgbImage,
    labels: &LabelMap,
    count: usize,
    size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Patch>, DataError> {
    let (h, w) = img.dims();
    if labels.dims() != (h, w) {
        return Err(DataError::Dimensions(
            "image and labels differ in size".into(),
        ));
    }
    if size == 0 || size > h || size > w {
        return Err(DataError::PatchTooLarge { size, h, w });
    }
    Ok((0..count)
        .map(|_| {
            let (y, x) = random_corner(rng, h, w, size);
            Patch {
                image: img.crop(y, x, size, size),
                labels: labels.crop(y, x, size, size),
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    image: u32,
    kind: u8,
    y: u32,
    x: u32,
    sd: f64,
    counts: [u32; 3],
}

fn window_counts(labels: &LabelMap, y: usize, x: usize, size: usize, classes: usize) -> Vec<u32> {
    let mut counts = vec![0u32; classes];
    let w = labels.width();
    let data = labels.as_slice();
    for row in y..y + size {
        for &c in &data[row * w + x..row * w + x + size] {
            if let Some(slot) = counts.get_mut(c as usize) {
                *slot += 1;
            }
        }
    }
    counts
}

fn check_corpus(images: &[(RgbImage, LabelMap)], plan: &AugmentPlan) -> Result<(), DataError> {
    plan.validate()?;
    if images.is_empty() {
        return Err(DataError::EmptyInput("training corpus"));
    }
    for (img, lb) in images {
        let (h, w) = img.dims();
        if lb.dims() != (h, w) {
            return Err(DataError::Dimensions(format!(
                "image is {h}x{w} but labels are {}x{}",
                lb.height(),
                lb.width()
            )));
        }
        if plan.patch_size > h.min(w) {
            return Err(DataError::PatchTooLarge {
                size: plan.patch_size,
                h,
                w,
            });
        }
    }
    Ok(())
}

/// Pass 1: draw every candidate corner from the transformed labels.
fn draw_candidates(
    images: &[(RgbImage, LabelMap)],
    plan: &AugmentPlan,
    seeds: &[u64],
) -> Result<Vec<Candidate>, DataError> {
    let classes = plan.classes;
    let per_image: Vec<Result<Vec<Candidate>, DataError>> = images
        .par_iter()
        .zip(seeds)
        .enumerate()
        .map(|(i, ((_, lb), &seed))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = Vec::with_capacity(plan.raw_per_image());
            for (k, kind) in TransformKind::ALL.into_iter().enumerate() {
                let quota = plan.quota(kind);
                if quota == 0 {
                    continue;
                }
                let t = plan.transform(kind);
                let labels = transform_labels(lb, &t)?;
                let (h, w) = labels.dims();
                for _ in 0..quota {
                    let (y, x) = random_corner(&mut rng, h, w, plan.patch_size);
                    let counts = window_counts(&labels, y, x, plan.patch_size, classes);
                    let total = (plan.patch_size * plan.patch_size) as f64;
                    let fr: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
                    let mut c3 = [0u32; 3];
                    for (d, s) in c3.iter_mut().zip(&counts) {
                        *d = *s;
                    }
                    out.push(Candidate {
                        image: i as u32,
                        kind: k as u8,
                        y: y as u32,
                        x: x as u32,
                        sd: population_sd(&fr),
                        counts: c3,
                    });
                }
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::new();
    for r in per_image {
        all.extend(r?);
    }
    Ok(all)
}

/// Indices of the retained candidates: the `raw - floor(raw * num / den)`
/// smallest scores, ties broken by index.
pub fn exclusion_split(scores: &[f64], exclusion: [usize; 2]) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let excluded = scores.len() * exclusion[0] / exclusion[1];
    let excluded_part = order.split_off(scores.len() - excluded);
    (order, excluded_part)
}

/// Pass 2: materialize candidates in slot order, transforming each
/// (image, transform) pair once.
fn materialize(
    images: &[(RgbImage, LabelMap)],
    plan: &AugmentPlan,
    cands: &[Candidate],
    slots: &[usize],
) -> Result<Vec<Patch>, DataError> {
    let mut by_group: Vec<Vec<usize>> = vec![Vec::new(); images.len() * TransformKind::ALL.len()];
    for (slot, &ci) in slots.iter().enumerate() {
        let c = &cands[ci];
        by_group[c.image as usize * TransformKind::ALL.len() + c.kind as usize].push(slot);
    }
    let size = plan.patch_size;
    let mut out: Vec<Option<Patch>> = vec![None; slots.len()];
    for (g, group) in by_group.iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        let (img, lb) = &images[g / TransformKind::ALL.len()];
        let kind = TransformKind::ALL[g % TransformKind::ALL.len()];
        let (ti, tl) = apply_transform(img, lb, &plan.transform(kind))?;
        for &slot in group {
            let c = &cands[slots[slot]];
            let (y, x) = (c.y as usize, c.x as usize);
            out[slot] = Some(Patch {
                image: ti.crop(y, x, size, size),
                labels: tl.crop(y, x, size, size),
            });
        }
    }
    Ok(out
        .into_iter()
        .map(|p| p.expect("every slot filled"))
        .collect())
}

struct Pool {
    cands: Vec<Candidate>,
    kept: Vec<usize>,
    report: BuildReport,
}

fn pool(
    images: &[(RgbImage, LabelMap)],
    plan: &AugmentPlan,
    rng: &mut impl Rng,
) -> Result<Pool, DataError> {
    check_corpus(images, plan)?;
    let seeds: Vec<u64> = images.iter().map(|_| rng.gen()).collect();
    let cands = draw_candidates(images, plan, &seeds)?;
    let scores: Vec<f64> = cands.iter().map(|c| c.sd).collect();
    let (mut kept, excluded) = exclusion_split(&scores, plan.exclusion);
    let remainder = kept.len() % plan.batch_size;
    if kept.len() == remainder {
        return Err(DataError::NotEnoughPatches {
            available: kept.len(),
            required: plan.batch_size,
        });
    }
    let max_kept_sd = kept.iter().map(|&i| scores[i]).fold(0.0, f64::max);
    let min_excluded_sd = excluded.iter().map(|&i| scores[i]).reduce(f64::min);
    for _ in 0..remainder {
        let j = rng.gen_range(0..kept.len());
        kept.swap_remove(j);
    }
    // swap_remove perturbs order; restore the (image, transform, draw) merge
    // order before the final shuffle so the result depends only on the seed.
    kept.sort_unstable();
    kept.shuffle(rng);
    let report = BuildReport {
        images: images.len(),
        raw: cands.len(),
        excluded: excluded.len(),
        discarded: remainder,
        count: kept.len(),
        batches: kept.len() / plan.batch_size,
        max_kept_sd,
        min_excluded_sd,
        class_fractions: Vec::new(),
        oversampled: false,
    };
    Ok(Pool {
        cands,
        kept,
        report,
    })
}

fn pooled_fractions(cands: &[Candidate], slots: &[usize], classes: usize) -> Vec<f64> {
    let mut counts = vec![0u64; classes];
    for &i in slots {
        for (c, &n) in counts.iter_mut().zip(&cands[i].counts) {
            *c += n as u64;
        }
    }
    normalize_counts(&counts)
}

/// Transforms every image with every planned augmentation, draws the quota
/// of patches from each, drops the most homogeneous share by class-proportion
/// SD, trims the rest to a whole number of batches and shuffles.
pub fn build_training_set(
    images: &[(RgbImage, LabelMap)],
    plan: &AugmentPlan,
    rng: &mut impl Rng,
) -> Result<PatchSet, DataError> {
    let Pool {
        cands,
        kept,
        mut report,
    } = pool(images, plan, rng)?;
    report.class_fractions = pooled_fractions(&cands, &kept, plan.classes);
    let patches = materialize(images, plan, &cands, &kept)?;
    Ok(PatchSet {
        patches,
        batch_size: plan.batch_size,
        report,
    })
}

fn within(fr: &[f64], target: &[f64], tol: f64) -> bool {
    fr.iter()
        .zip(target)
        .all(|(a, b)| (a - b).abs() <= tol + 1e-12)
}

/// Same patch count as [`build_training_set`], but resampled from the
/// filtered pool with replacement until the pooled class fractions are
/// within [`BALANCE_TOLERANCE`] of [`BALANCE_TARGET`]. Each slot takes the
/// best of a few random proposals, which oversamples fibrosis-rich patches.
pub fn build_balanced_training_set(
    images: &[(RgbImage, LabelMap)],
    plan: &AugmentPlan,
    rng: &mut impl Rng,
) -> Result<PatchSet, DataError> {
    if plan.classes != BALANCE_TARGET.len() {
        return Err(DataError::InvalidConfig(format!(
            "balancing targets 3 classes, plan has {}",
            plan.classes
        )));
    }
    let Pool {
        cands,
        kept,
        mut report,
    } = pool(images, plan, rng)?;
    let standard = pooled_fractions(&cands, &kept, plan.classes);
    let slots = if within(&standard, &BALANCE_TARGET, BALANCE_TOLERANCE) {
        kept
    } else {
        let n = kept.len();
        let mut sum = [0f64; 3];
        let mut slots = Vec::with_capacity(n);
        for _ in 0..n {
            let mut best = (f64::INFINITY, 0usize);
            for _ in 0..BALANCE_PROPOSALS {
                let ci = kept[rng.gen_range(0..kept.len())];
                let c = &cands[ci].counts;
                let total: f64 = sum.iter().sum::<f64>() + c.iter().map(|&v| v as f64).sum::<f64>();
                let dist: f64 = (0..3)
                    .map(|k| ((sum[k] + c[k] as f64) / total - BALANCE_TARGET[k]).powi(2))
                    .sum();
                if dist < best.0 {
                    best = (dist, ci);
                }
            }
            for (s, &v) in sum.iter_mut().zip(&cands[best.1].counts) {
                *s += v as f64;
            }
            slots.push(best.1);
        }
        report.oversampled = true;
        slots
    };
    let fractions = pooled_fractions(&cands, &slots, plan.classes);
    if !within(&fractions, &BALANCE_TARGET, BALANCE_TOLERANCE) {
        return Err(DataError::BalanceInfeasible {
            achieved: fractions,
        });
    }
    report.class_fractions = fractions;
    let patches = materialize(images, plan, &cands, &slots)?;
    Ok(PatchSet {
        patches,
        batch_size: plan.batch_size,
        report,
    })
}

/// Contrast-adjusts 40% of patches through the red channel and a disjoint
/// 40% through the blue channel, each with a random degree and offset sign.
pub fn color_augment(set: &mut PatchSet, limits: &ColorLimits, rng: &mut impl Rng) {
    let n = set.patches.len();
    let share = n * 2 / 5;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for (j, &i) in order[..2 * share].iter().enumerate() {
        let channel = if j < share {
            ColorChannel::Red
        } else {
            ColorChannel::Blue
        };
        let degree = rng.gen_range(0.0..=1.0);
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let signed = ColorLimits {
            gain: limits.gain,
            offset: sign * limits.offset,
        };
        let p = &mut set.patches[i];
        p.image = color_adjust(&p.image, channel, degree, &signed);
    }
}
