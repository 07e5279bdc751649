//! Per-pixel softmax, cross-entropy and their fused gradient.
//!
//! Labels are flat class indices in `(n, h, w)` order, one per pixel of the
//! logits tensor.

use thiserror::Error;

use crate::numerics::{NumericsError, Scalar, Tensor4};

/// Probabilities are clamped to this before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("softmax needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("label {label} at pixel {pixel} is out of range for {classes} classes")]
    LabelOutOfRange {
        pixel: usize,
        label: u8,
        classes: usize,
    },
    #[error("{context}: expected {expected} entries, got {actual}")]
    Length {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

fn check_labels(positions: usize, classes: usize, labels: &[u8]) -> Result<(), LossError> {
    if labels.len() != positions {
        return Err(LossError::Length {
            context: "labels",
            expected: positions,
            actual: labels.len(),
        });
    }
    if let Some((pixel, &label)) = labels
        .iter()
        .enumerate()
        .find(|(_, &l)| l as usize >= classes)
    {
        return Err(LossError::LabelOutOfRange {
            pixel,
            label,
            classes,
        });
    }
    Ok(())
}

fn softmax_into<T: Scalar>(z: &[T], out: &mut [T]) {
    let max = z.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

/// Normalizes each pixel's channel vector to a probability distribution,
/// subtracting the per-pixel maximum first.
pub fn softmax<T: Scalar>(logits: &Tensor4<T>) -> Result<Tensor4<T>, LossError> {
    let k = logits.shape().c;
    if k < 2 {
        return Err(LossError::TooFewClasses(k));
    }
    if !logits.all_finite() {
        return Err(LossError::NonFinite("logits"));
    }
    let mut out = Tensor4::zeros(logits.shape())?;
    for (z, p) in logits
        .data()
        .chunks_exact(k)
        .zip(out.data_mut().chunks_exact_mut(k))
    {
        softmax_into(z, p);
    }
    Ok(out)
}

/// Mean over pixels of `-log p[true class]`, with `p` floored at
/// [`PROB_FLOOR`].
pub fn cross_entropy<T: Scalar>(probs: &Tensor4<T>, labels: &[u8]) -> Result<f64, LossError> {
    let s = probs.shape();
    check_labels(s.positions(), s.c, labels)?;
    let total: f64 = probs
        .data()
        .chunks_exact(s.c)
        .zip(labels)
        .map(|(p, &y)| -(p[y as usize].to_f64().max(PROB_FLOOR)).ln())
        .sum();
    Ok(total / s.positions() as f64)
}

/// Gradient of `cross_entropy(softmax(logits))` with respect to the logits:
/// `(softmax(z) - onehot(y)) / pixel_count` at every pixel.
pub fn softmax_ce_gradient<T: Scalar>(
    logits: &Tensor4<T>,
    labels: &[u8],
) -> Result<Tensor4<T>, LossError> {
    let s = logits.shape();
    let mut grad = softmax(logits)?;
    check_labels(s.positions(), s.c, labels)?;
    let scale = T::from_f64(1.0 / s.positions() as f64);
    for (g, &y) in grad.data_mut().chunks_exact_mut(s.c).zip(labels) {
        g[y as usize] -= T::one();
        for v in g.iter_mut() {
            *v *= scale;
        }
    }
    Ok(grad)
}

/// Index of the largest channel at each pixel; ties go to the lower index.
pub fn argmax_channels<T: Scalar>(logits: &Tensor4<T>) -> Vec<u8> {
    logits
        .data()
        .chunks_exact(logits.shape().c)
        .map(|px| {
            let mut best = 0;
            for (i, &v) in px.iter().enumerate().skip(1) {
                if v > px[best] {
                    best = i;
                }
            }
            best as u8
        })
        .collect()
}

/// Fraction of pixels whose argmax equals the label.
pub fn pixel_accuracy<T: Scalar>(logits: &Tensor4<T>, labels: &[u8]) -> f64 {
    let pred = argmax_channels(logits);
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / pred.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, Shape4};
    use proptest::prelude::*;

    fn pixels(k: usize, values: &[f64]) -> Tensor4<f64> {
        Tensor4::from_vec(Shape4::new(1, 1, values.len() / k, k), values.to_vec()).unwrap()
    }

    #[test]
    fn uniform_logits() {
        let p = softmax(&pixels(3, &[0.0, 0.0, 0.0])).unwrap();
        for &v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn log_weights_normalize_by_hand() {
        let z = [1.0f64.ln(), 2.0f64.ln(), 3.0f64.ln()];
        let p = softmax(&pixels(3, &z)).unwrap();
        for (got, want) in p.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn large_logits_stay_finite() {
        let p = softmax(&pixels(2, &[1000.0, 999.0])).unwrap();
        assert!(p.all_finite());
        assert!((p.data()[0] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_logits() {
        assert!(matches!(
            softmax(&pixels(1, &[0.0, 1.0])),
            Err(LossError::TooFewClasses(1))
        ));
        assert!(matches!(
            softmax(&pixels(2, &[f64::NAN, 1.0])),
            Err(LossError::NonFinite(_))
        ));
    }

    #[test]
    fn cross_entropy_values() {
        let perfect = pixels(3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(cross_entropy(&perfect, &[0, 2]).unwrap(), 0.0);
        let third = 1.0 / 3.0;
        let uniform = pixels(3, &[third; 6]);
        assert!((cross_entropy(&uniform, &[1, 2]).unwrap() - 3.0f64.ln()).abs() < 1e-12);
        let mixed = pixels(3, &[1.0, 0.0, 0.0, third, third, third]);
        let want = 3.0f64.ln() / 2.0;
        assert!((want - 0.5493).abs() < 1e-4);
        assert!((cross_entropy(&mixed, &[0, 1]).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let p = pixels(2, &[1.0, 0.0]);
        let l = cross_entropy(&p, &[1]).unwrap();
        assert!((l - 12.0 * 10f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn label_errors_name_the_pixel() {
        let p = pixels(3, &[0.2, 0.3, 0.5, 0.2, 0.3, 0.5]);
        assert_eq!(
            cross_entropy(&p, &[0, 3]).unwrap_err(),
            LossError::LabelOutOfRange {
                pixel: 1,
                label: 3,
                classes: 3
            }
        );
        assert!(cross_entropy(&p, &[0]).is_err());
    }

    #[test]
    fn gradient_for_uniform_pixel() {
        let g = softmax_ce_gradient(&pixels(3, &[0.0, 0.0, 0.0]), &[0]).unwrap();
        let want = [-2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
        for (a, b) in g.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_vanishes_at_confident_correct_prediction() {
        let g = softmax_ce_gradient(&pixels(3, &[40.0, 0.0, 0.0]), &[0]).unwrap();
        assert!(g.data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let z = [
            0.3, -1.2, 2.0, 0.7, 0.1, -0.4, 1.5, 1.4, -2.2, 0.0, 0.9, -0.8,
        ];
        let labels = [2u8, 0, 1, 1];
        let analytic = softmax_ce_gradient(&pixels(3, &z), &labels).unwrap();
        let report = grad_check(
            |t| cross_entropy(&softmax(&pixels(3, t)).unwrap(), &labels).unwrap(),
            &z,
            analytic.data(),
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(report.passed(), "{}", report.max_relative_error);
    }

    proptest! {
        #[test]
        fn rows_are_distributions(z in prop::collection::vec(-30.0f64..30.0, 3..60), shift in -50.0f64..50.0) {
            let k = 3;
            let z = &z[..z.len() / k * k];
            let p = softmax(&pixels(k, z)).unwrap();
            let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
            let q = softmax(&pixels(k, &shifted)).unwrap();
            for (row, qrow) in p.data().chunks(k).zip(q.data().chunks(k)) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
                for (a, b) in row.iter().zip(qrow) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn gradient_rows_sum_to_zero(z in prop::collection::vec(-10.0f64..10.0, 12), labels in prop::collection::vec(0u8..3, 4)) {
            let g = softmax_ce_gradient(&pixels(3, &z), &labels).unwrap();
            for row in g.data().chunks(3) {
                prop_assert!(row.iter().sum::<f64>().abs() < 1e-12);
            }
            let loss = cross_entropy(&softmax(&pixels(3, &z)).unwrap(), &labels).unwrap();
            prop_assert!(loss >= 0.0);
        }
    }
}
