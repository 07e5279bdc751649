//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::loss::LossError;
use crate::numerics::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            alpha: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
        }
    }
}

/// Moment accumulators for a fixed list of parameter blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, block_lens: &[usize]) -> Result<Self, LossError> {
        let ok = |b: f64| (0.0..1.0).contains(&b);
        if !ok(config.beta1)
            || !ok(config.beta2)
            || !(config.alpha >= 0.0)
            || !(config.eps_hat > 0.0)
        {
            return Err(LossError::NonFinite("Adam hyper-parameters"));
        }
        Ok(Self {
            config,
            t: 0,
            m: block_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: block_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
        })
    }

    pub fn first_moments(&self) -> &[Vec<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.v
    }
}

/// One Adam update of every block. Nothing is modified if any gradient is
/// non-finite or a block length disagrees with the state.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    state: &mut AdamState<T>,
) -> Result<(), LossError> {
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(LossError::Length {
            context: "Adam parameter blocks",
            expected: state.m.len(),
            actual: params.len().min(grads.len()),
        });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.len() != m.len() || g.len() != m.len() {
            return Err(LossError::Length {
                context: "Adam block",
                expected: m.len(),
                actual: p.len().min(g.len()),
            });
        }
    }
    if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(LossError::NonFinite("gradient; Adam update refused"));
    }
    state.t += 1;
    let c = state.config;
    let t = state.t as i32;
    let b1 = T::from_f64(c.beta1);
    let b2 = T::from_f64(c.beta2);
    let one = T::one();
    let correct1 = T::from_f64(1.0 / (1.0 - c.beta1.powi(t)));
    let correct2 = T::from_f64(1.0 / (1.0 - c.beta2.powi(t)));
    let alpha = T::from_f64(c.alpha);
    let eps = T::from_f64(c.eps_hat);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let m_hat = m[i] * correct1;
            let v_hat = v[i] * correct2;
            p[i] -= alpha * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(theta: &mut [f64], g: &[f64], state: &mut AdamState<f64>) {
        adam_step(&mut [theta], &[g], state).unwrap();
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut theta = vec![1.5, -2.0];
        let mut s = AdamState::new(AdamConfig::default(), &[2]).unwrap();
        step(&mut theta, &[0.0, 0.0], &mut s);
        assert_eq!(theta, vec![1.5, -2.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_alpha() {
        // m_hat = g, v_hat = g^2, so the step is alpha * g / (|g| + eps).
        for g in [1.0, 10.0, 0.02, -3.0] {
            let mut theta = vec![0.0];
            let mut s = AdamState::new(AdamConfig::default(), &[1]).unwrap();
            step(&mut theta, &[g], &mut s);
            let want = -0.001 * g / (g.abs() + 1e-8);
            assert!((theta[0] - want).abs() < 1e-15);
            assert!((theta[0] + 0.001 * g.signum()).abs() < 1e-6);
        }
    }

    #[test]
    fn converges_on_a_parabola() {
        let mut theta = vec![3.0];
        let cfg = AdamConfig {
            alpha: 0.05,
            ..AdamConfig::default()
        };
        let mut s = AdamState::new(cfg, &[1]).unwrap();
        let mut trace = Vec::new();
        for _ in 0..2000 {
            let g = [2.0 * theta[0]];
            step(&mut theta, &g, &mut s);
            trace.push(theta[0].abs());
        }
        assert!(theta[0].abs() < 1e-2, "{}", theta[0]);
        // After the transient the distance to the optimum only shrinks over
        // each window of 100 steps.
        for w in trace[200..].chunks(100).collect::<Vec<_>>().windows(2) {
            let a = w[0].iter().cloned().fold(0.0, f64::max);
            let b = w[1].iter().cloned().fold(0.0, f64::max);
            assert!(b <= a + 1e-12);
        }
    }

    #[test]
    fn non_finite_gradient_is_refused() {
        let mut theta = vec![1.0, 2.0];
        let mut s = AdamState::new(AdamConfig::default(), &[2]).unwrap();
        let err = adam_step(&mut [&mut theta[..]], &[&[0.5, f64::NAN]], &mut s).unwrap_err();
        assert!(matches!(err, LossError::NonFinite(_)));
        assert_eq!(theta, vec![1.0, 2.0]);
        assert_eq!(s.t, 0);
        assert!(s.first_moments()[0].iter().all(|&m| m == 0.0));
    }

    #[test]
    fn zero_learning_rate_is_frozen() {
        let mut theta = vec![0.25f32, -7.5];
        let cfg = AdamConfig {
            alpha: 0.0,
            ..AdamConfig::default()
        };
        let mut s = AdamState::new(cfg, &[2]).unwrap();
        for _ in 0..5 {
            adam_step(&mut [&mut theta[..]], &[&[3.0, -1.0]], &mut s).unwrap();
        }
        assert_eq!(theta, vec![0.25, -7.5]);
    }

    #[test]
    fn block_mismatch_is_rejected() {
        let mut theta = vec![1.0; 3];
        let mut s = AdamState::new(AdamConfig::default(), &[2]).unwrap();
        assert!(adam_step(&mut [&mut theta[..]], &[&[0.0; 3]], &mut s).is_err());
    }
}
