use rayon::prelude::*;

use super::{NumericsError, Scalar, Tensor4};

pub const DEFAULT_EPSILON: f64 = 1e-5;
/// Weight of the previous running statistic in the moving average.
pub const DEFAULT_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with the running statistics.
    Infer,
}

/// Per-channel learnable scale/shift plus running statistics for inference.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl<T: Scalar> BatchNormParams<T> {
    /// gamma 1, beta 0, running mean 0, running variance 1.
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<(), NumericsError> {
        let c = self.gamma.len();
        if self.beta.len() != c || self.running_mean.len() != c || self.running_var.len() != c {
            return Err(NumericsError::InvalidBatchNorm("parameter lengths differ"));
        }
        if !(self.epsilon > 0.0) {
            return Err(NumericsError::InvalidBatchNorm("epsilon must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(NumericsError::InvalidBatchNorm(
                "momentum must lie in [0, 1)",
            ));
        }
        Ok(())
    }

    /// Folds one batch's statistics into the running averages.
    pub fn update_running(&mut self, batch_mean: &[T], batch_var: &[T]) {
        let m = T::from_f64(self.momentum);
        let rest = T::one() - m;
        for (r, &b) in self.running_mean.iter_mut().zip(batch_mean) {
            *r = m * *r + rest * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(batch_var) {
            *r = m * *r + rest * b;
        }
    }

    pub fn cast<U: Scalar>(&self) -> BatchNormParams<U> {
        let c = |v: &[T]| v.iter().map(|&x| U::from_f64(x.to_f64())).collect();
        BatchNormParams {
            gamma: c(&self.gamma),
            beta: c(&self.beta),
            running_mean: c(&self.running_mean),
            running_var: c(&self.running_var),
            epsilon: self.epsilon,
            momentum: self.momentum,
        }
    }
}

/// State saved by [`batchnorm_forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T = f32> {
    mode: Mode,
    x_hat: Option<Tensor4<T>>,
    inv_std: Vec<T>,
    gamma: Vec<T>,
    /// Biased per-channel batch mean (train mode only).
    pub batch_mean: Vec<T>,
    /// Biased per-channel batch variance (train mode only).
    pub batch_var: Vec<T>,
}

impl<T: Scalar> BatchNormCache<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

/// Per-channel sums over every position, reduced sample by sample in batch
/// order so the result is independent of thread scheduling.
fn channel_sums<T: Scalar>(x: &Tensor4<T>, f: impl Fn(usize, T) -> f64 + Sync) -> Vec<f64> {
    let c = x.shape().c;
    let partials: Vec<Vec<f64>> = x
        .data()
        .par_chunks(x.shape().sample_len())
        .map(|sample| {
            let mut acc = vec![0.0f64; c];
            for px in sample.chunks_exact(c) {
                for (ch, (a, &v)) in acc.iter_mut().zip(px).enumerate() {
                    *a += f(ch, v);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0f64; c];
    for p in &partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

fn check_channels<T: Scalar>(
    x: &Tensor4<T>,
    params: &BatchNormParams<T>,
) -> Result<(), NumericsError> {
    if x.shape().c != params.channels() {
        return Err(NumericsError::ChannelMismatch {
            context: "batchnorm input",
            expected: params.channels(),
            actual: x.shape().c,
        });
    }
    Ok(())
}

/// `y = gamma * (x - mean) / sqrt(var + eps) + beta`, per channel.
///
/// Train mode uses biased statistics over all `n * h * w` positions and
/// reports them in the cache so the caller can update running averages.
/// Infer mode uses the running statistics and yields a cache that cannot be
/// differentiated.
pub fn batchnorm_forward<T: Scalar>(
    x: &Tensor4<T>,
    params: &BatchNormParams<T>,
    mode: Mode,
) -> Result<(Tensor4<T>, BatchNormCache<T>), NumericsError> {
    check_channels(x, params)?;
    let c = params.channels();
    let positions = x.shape().positions();
    let (mean, var): (Vec<T>, Vec<T>) = match mode {
        Mode::Train => {
            if positions < 2 {
                return Err(NumericsError::DegenerateBatch { positions });
            }
            let n = positions as f64;
            let mean64: Vec<f64> = channel_sums(x, |_, v| v.to_f64())
                .into_iter()
                .map(|s| s / n)
                .collect();
            let var64: Vec<f64> = channel_sums(x, |ch, v| (v.to_f64() - mean64[ch]).powi(2))
                .into_iter()
                .map(|s| s / n)
                .collect();
            (
                mean64.iter().map(|&v| T::from_f64(v)).collect(),
                var64.iter().map(|&v| T::from_f64(v)).collect(),
            )
        }
        Mode::Infer => (params.running_mean.clone(), params.running_var.clone()),
    };
    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::from_f64(1.0 / (v.to_f64() + params.epsilon).sqrt()))
        .collect();

    let mut y = Tensor4::zeros(x.shape())?;
    let mut x_hat = match mode {
        Mode::Train => Some(Tensor4::zeros(x.shape())?),
        Mode::Infer => None,
    };
    {
        let (gamma, beta) = (&params.gamma, &params.beta);
        let normalize = |xs: &[T], ys: &mut [T], hs: Option<&mut [T]>| {
            let mut hs = hs;
            for (i, (xv, yv)) in xs.chunks_exact(c).zip(ys.chunks_exact_mut(c)).enumerate() {
                for ch in 0..c {
                    let h = (xv[ch] - mean[ch]) * inv_std[ch];
                    yv[ch] = gamma[ch] * h + beta[ch];
                    if let Some(hs) = hs.as_deref_mut() {
                        hs[i * c + ch] = h;
                    }
                }
            }
        };
        let len = x.shape().sample_len();
        match x_hat.as_mut() {
            Some(xh) => x
                .data()
                .par_chunks(len)
                .zip(y.data_mut().par_chunks_mut(len))
                .zip(xh.data_mut().par_chunks_mut(len))
                .for_each(|((xs, ys), hs)| normalize(xs, ys, Some(hs))),
            None => x
                .data()
                .par_chunks(len)
                .zip(y.data_mut().par_chunks_mut(len))
                .for_each(|(xs, ys)| normalize(xs, ys, None)),
        }
    }
    let (batch_mean, batch_var) = match mode {
        Mode::Train => (mean, var),
        Mode::Infer => (Vec::new(), Vec::new()),
    };
    Ok((
        y,
        BatchNormCache {
            mode,
            x_hat,
            inv_std,
            gamma: params.gamma.clone(),
            batch_mean,
            batch_var,
        },
    ))
}

/// Gradients of the train-mode transform with the batch mean and variance
/// treated as functions of the input.
///
/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub fn batchnorm_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    cache: &BatchNormCache<T>,
) -> Result<(Tensor4<T>, Vec<T>, Vec<T>), NumericsError> {
    let x_hat = match (&cache.mode, &cache.x_hat) {
        (Mode::Train, Some(h)) => h,
        _ => return Err(NumericsError::InferCache),
    };
    if grad_out.shape() != x_hat.shape() {
        return Err(NumericsError::ShapeMismatch {
            context: "batchnorm grad_out",
            expected: x_hat.shape(),
            actual: grad_out.shape(),
        });
    }
    let c = x_hat.shape().c;
    let n = x_hat.shape().positions() as f64;
    let sum_g = channel_sums(grad_out, |_, v| v.to_f64());
    let hd = x_hat.data();
    let sum_gh = {
        let len = x_hat.shape().sample_len();
        let partials: Vec<Vec<f64>> = grad_out
            .data()
            .par_chunks(len)
            .zip(hd.par_chunks(len))
            .map(|(gs, hs)| {
                let mut acc = vec![0.0f64; c];
                for (i, (&g, &h)) in gs.iter().zip(hs).enumerate() {
                    acc[i % c] += g.to_f64() * h.to_f64();
                }
                acc
            })
            .collect();
        let mut total = vec![0.0f64; c];
        for p in &partials {
            for (t, v) in total.iter_mut().zip(p) {
                *t += v;
            }
        }
        total
    };
    let scale: Vec<T> = (0..c)
        .map(|ch| T::from_f64(cache.gamma[ch].to_f64() * cache.inv_std[ch].to_f64() / n))
        .collect();
    let mean_g: Vec<T> = sum_g.iter().map(|&s| T::from_f64(s)).collect();
    let mean_gh: Vec<T> = sum_gh.iter().map(|&s| T::from_f64(s)).collect();
    let nt = T::from_f64(n);
    let data: Vec<T> = grad_out
        .data()
        .iter()
        .zip(hd)
        .enumerate()
        .map(|(i, (&g, &h))| {
            let ch = i % c;
            scale[ch] * (nt * g - mean_g[ch] - h * mean_gh[ch])
        })
        .collect();
    let grad_x = Tensor4::from_vec(grad_out.shape(), data)?;
    let grad_gamma = sum_gh.iter().map(|&v| T::from_f64(v)).collect();
    let grad_beta = sum_g.iter().map(|&v| T::from_f64(v)).collect();
    Ok((grad_x, grad_gamma, grad_beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::testing::{central_difference, random_tensor};
    use crate::numerics::Shape4;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn column(v: &[f64]) -> Tensor4<f64> {
        Tensor4::from_vec(Shape4::new(v.len(), 1, 1, 1), v.to_vec()).unwrap()
    }

    #[test]
    fn three_values_normalize_by_hand() {
        let mut p = BatchNormParams::<f64>::identity(1);
        p.epsilon = 1e-12;
        let (y, cache) = batchnorm_forward(&column(&[1.0, 2.0, 3.0]), &p, Mode::Train).unwrap();
        // mean 2, variance 2/3, so (x - 2) / sqrt(2/3) = -1.2247, 0, 1.2247
        let s = (1.5f64).sqrt();
        for (got, want) in y.data().iter().zip([-s, 0.0, s]) {
            assert!((got - want).abs() < 1e-9);
        }
        assert!((cache.batch_mean[0] - 2.0).abs() < 1e-15);
        assert!((cache.batch_var[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_input_yields_shift() {
        let mut p = BatchNormParams::<f64>::identity(1);
        p.beta[0] = 5.0;
        let (y, _) = batchnorm_forward(&column(&[4.0; 6]), &p, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| (v - 5.0).abs() < 1e-12));
    }

    #[test]
    fn train_output_is_standardized_per_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor(&mut rng, Shape4::new(3, 4, 5, 6)).map(|v| 3.0 * v + 1.0);
        let p = BatchNormParams::<f64>::identity(6);
        let (y, _) = batchnorm_forward(&x, &p, Mode::Train).unwrap();
        let n = x.shape().positions() as f64;
        for ch in 0..6 {
            let vals: Vec<f64> = y.data().iter().skip(ch).step_by(6).copied().collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn infer_mode_uses_running_statistics() {
        let mut p = BatchNormParams::<f64>::identity(1);
        p.running_mean[0] = 1.0;
        p.running_var[0] = 4.0;
        p.epsilon = 1e-12;
        let (y, cache) = batchnorm_forward(&column(&[3.0]), &p, Mode::Infer).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-9);
        let g = column(&[1.0]);
        assert!(matches!(
            batchnorm_backward(&g, &cache),
            Err(NumericsError::InferCache)
        ));
    }

    #[test]
    fn running_average_uses_momentum() {
        let mut p = BatchNormParams::<f64>::identity(1);
        p.update_running(&[2.0], &[3.0]);
        assert!((p.running_mean[0] - 0.2).abs() < 1e-15);
        assert!((p.running_var[0] - (0.9 + 0.3)).abs() < 1e-15);
    }

    #[test]
    fn single_position_batch_is_degenerate() {
        let p = BatchNormParams::<f64>::identity(1);
        let err = batchnorm_forward(&column(&[1.0]), &p, Mode::Train).unwrap_err();
        assert!(matches!(
            err,
            NumericsError::DegenerateBatch { positions: 1 }
        ));
    }

    #[test]
    fn zero_upstream_gradient() {
        let p = BatchNormParams::<f64>::identity(1);
        let (_, cache) = batchnorm_forward(&column(&[1.0, 4.0, 2.0]), &p, Mode::Train).unwrap();
        let (gx, gg, gb) = batchnorm_backward(&column(&[0.0; 3]), &cache).unwrap();
        assert!(gx.data().iter().chain(&gg).chain(&gb).all(|&v| v == 0.0));
    }

    #[test]
    fn beta_gradient_on_two_elements() {
        // y_i = gamma * x_hat_i + beta, so dL/dbeta = g_1 + g_2.
        let p = BatchNormParams::<f64>::identity(1);
        let (_, cache) = batchnorm_forward(&column(&[0.0, 2.0]), &p, Mode::Train).unwrap();
        let (_, gg, gb) = batchnorm_backward(&column(&[0.75, -2.0]), &cache).unwrap();
        assert_eq!(gb, vec![-1.25]);
        // x_hat = (-1, 1) up to epsilon, so dL/dgamma = -0.75 - 2.0.
        assert!((gg[0] + 2.75).abs() < 1e-4);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_tensor(&mut rng, Shape4::new(2, 3, 3, 4));
        let mut p = BatchNormParams::<f64>::identity(4);
        for ch in 0..4 {
            p.gamma[ch] = 0.5 + ch as f64 * 0.3;
            p.beta[ch] = ch as f64 * 0.1 - 0.2;
        }
        let proj = random_tensor(&mut rng, x.shape());
        let loss = |x: &Tensor4<f64>, p: &BatchNormParams<f64>| -> f64 {
            let (y, _) = batchnorm_forward(x, p, Mode::Train).unwrap();
            y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = batchnorm_forward(&x, &p, Mode::Train).unwrap();
        let (gx, gg, gb) = batchnorm_backward(&proj, &cache).unwrap();
        let nx = central_difference(x.data(), 1e-5, |d| {
            loss(&Tensor4::from_vec(x.shape(), d.to_vec()).unwrap(), &p)
        });
        let ng = central_difference(&p.gamma, 1e-5, |d| {
            let mut q = p.clone();
            q.gamma = d.to_vec();
            loss(&x, &q)
        });
        let nb = central_difference(&p.beta, 1e-5, |d| {
            let mut q = p.clone();
            q.beta = d.to_vec();
            loss(&x, &q)
        });
        let pairs = gx
            .data()
            .iter()
            .zip(&nx)
            .chain(gg.iter().zip(&ng))
            .chain(gb.iter().zip(&nb));
        for (a, n) in pairs {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-12);
            assert!(rel < 1e-4, "analytic {a} numeric {n}");
        }
    }

    #[test]
    fn validate_rejects_bad_epsilon() {
        let mut p = BatchNormParams::<f32>::identity(2);
        p.epsilon = 0.0;
        assert!(p.validate().is_err());
        p.epsilon = 1e-5;
        p.beta.push(0.0);
        assert!(p.validate().is_err());
    }
}
