use super::{NumericsError, Scalar, Shape4, Tensor4};

/// Positions where the ReLU input was strictly positive.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReluMask {
    shape: Shape4,
    active: Vec<bool>,
}

impl ReluMask {
    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.active
    }

    pub fn from_bools(shape: Shape4, active: Vec<bool>) -> Result<Self, NumericsError> {
        if active.len() != shape.len() {
            return Err(NumericsError::DataLength {
                shape,
                expected: shape.len(),
                actual: active.len(),
            });
        }
        Ok(Self { shape, active })
    }
}

pub fn relu_forward<T: Scalar>(x: &Tensor4<T>) -> (Tensor4<T>, ReluMask) {
    let active: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
    let y = x.map(|v| if v > T::zero() { v } else { T::zero() });
    (
        y,
        ReluMask {
            shape: x.shape(),
            active,
        },
    )
}

/// Passes gradient where the input was positive; the subgradient at exactly
/// zero is zero.
pub fn relu_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    mask: &ReluMask,
) -> Result<Tensor4<T>, NumericsError> {
    if grad_out.shape() != mask.shape {
        return Err(NumericsError::ShapeMismatch {
            context: "relu grad_out",
            expected: mask.shape,
            actual: grad_out.shape(),
        });
    }
    let data = grad_out
        .data()
        .iter()
        .zip(&mask.active)
        .map(|(&g, &on)| if on { g } else { T::zero() })
        .collect();
    Tensor4::from_vec(grad_out.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::testing::{central_difference, random_tensor};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn row(v: &[f64]) -> Tensor4<f64> {
        Tensor4::from_vec(Shape4::new(1, 1, v.len(), 1), v.to_vec()).unwrap()
    }

    #[test]
    fn clamps_negatives_and_zero() {
        let (y, mask) = relu_forward(&row(&[-1.0, 0.0, 2.0]));
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        assert_eq!(mask.as_slice(), &[false, false, true]);
    }

    #[test]
    fn positive_input_passes_through() {
        let x = row(&[0.5, 3.0, 1e-9]);
        let (y, mask) = relu_forward(&x);
        assert_eq!(y, x);
        assert!(mask.as_slice().iter().all(|&m| m));
    }

    #[test]
    fn matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&mut rng, Shape4::new(2, 3, 4, 5));
        let (y, _) = relu_forward(&x);
        for (i, &v) in x.data().iter().enumerate() {
            let want = if v > 0.0 { v } else { 0.0 };
            assert_eq!(y.data()[i], want);
        }
    }

    #[test]
    fn backward_gates_by_mask() {
        let g = row(&[1.0, 2.0, 3.0]);
        let all = ReluMask::from_bools(g.shape(), vec![true; 3]).unwrap();
        let none = ReluMask::from_bools(g.shape(), vec![false; 3]).unwrap();
        assert_eq!(relu_backward(&g, &all).unwrap(), g);
        assert!(relu_backward(&g, &none)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let wrong = ReluMask::from_bools(Shape4::new(1, 1, 1, 3), vec![true; 3]).unwrap();
        assert!(relu_backward(&g, &wrong).is_err());
    }

    #[test]
    fn backward_matches_finite_differences_away_from_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut x = random_tensor(&mut rng, Shape4::new(1, 4, 4, 3));
        for v in x.data_mut() {
            if v.abs() < 0.05 {
                *v += 0.1;
            }
        }
        let proj = random_tensor(&mut rng, x.shape());
        let (_, mask) = relu_forward(&x);
        let analytic = relu_backward(&proj, &mask).unwrap();
        let numeric = central_difference(x.data(), 1e-5, |d| {
            let (y, _) = relu_forward(&Tensor4::from_vec(x.shape(), d.to_vec()).unwrap());
            y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
        });
        for (a, n) in analytic.data().iter().zip(&numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-12);
            assert!(rel < 1e-4);
        }
    }

    proptest! {
        #[test]
        fn idempotent(values in prop::collection::vec(-10.0f64..10.0, 1..64)) {
            let x = row(&values);
            let (once, _) = relu_forward(&x);
            let (twice, _) = relu_forward(&once);
            prop_assert_eq!(once, twice);
        }
    }
}
