use rayon::prelude::*;

use super::scalar::{gemm, MatLayout};
use super::{NumericsError, Scalar, Shape4, Tensor4};

/// Upper bound on the size of one unrolled patch matrix, in elements.
/// Large images are processed in horizontal strips so the unrolled form
/// never exceeds this.
const STRIP_BUDGET: usize = 1 << 21;

/// Convolution weights laid out as `(kh, kw, c_in, c_out)`, stride 1, no bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel<T = f32> {
    weights: Tensor4<T>,
    padding: usize,
}

impl<T: Scalar> ConvKernel<T> {
    /// Wraps a weight tensor whose shape is read as `(kh, kw, c_in, c_out)`.
    ///
    /// Only square 1x1 and 3x3 kernels are accepted, and the padding must be
    /// the size-preserving `(k - 1) / 2`.
    pub fn new(weights: Tensor4<T>, padding: usize) -> Result<Self, NumericsError> {
        let s = weights.shape();
        let (kh, kw) = (s.n, s.h);
        if kh != kw || !(kh == 1 || kh == 3) || padding != (kh - 1) / 2 {
            return Err(NumericsError::InvalidKernel { kh, kw, padding });
        }
        Ok(Self { weights, padding })
    }

    pub fn zeros(
        kh: usize,
        kw: usize,
        c_in: usize,
        c_out: usize,
        padding: usize,
    ) -> Result<Self, NumericsError> {
        Self::new(Tensor4::zeros(Shape4::new(kh, kw, c_in, c_out))?, padding)
    }

    pub fn kh(&self) -> usize {
        self.weights.shape().n
    }

    pub fn kw(&self) -> usize {
        self.weights.shape().h
    }

    pub fn c_in(&self) -> usize {
        self.weights.shape().w
    }

    pub fn c_out(&self) -> usize {
        self.weights.shape().c
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn weights(&self) -> &Tensor4<T> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Tensor4<T> {
        &mut self.weights
    }

    /// Rows of the unrolled weight matrix, `kh * kw * c_in`.
    fn taps(&self) -> usize {
        self.kh() * self.kw() * self.c_in()
    }

    pub fn cast<U: Scalar>(&self) -> ConvKernel<U> {
        ConvKernel {
            weights: self.weights.cast(),
            padding: self.padding,
        }
    }
}

fn check_input<T: Scalar>(input: Shape4, kernel: &ConvKernel<T>) -> Result<(), NumericsError> {
    if input.c != kernel.c_in() {
        return Err(NumericsError::ChannelMismatch {
            context: "conv2d input",
            expected: kernel.c_in(),
            actual: input.c,
        });
    }
    Ok(())
}

fn strip_rows(w: usize, taps: usize, h: usize) -> usize {
    (STRIP_BUDGET / (w * taps).max(1)).clamp(1, h)
}

/// Gathers the zero-padded receptive fields of rows `y0..y1` into `cols`,
/// one row per output pixel, columns ordered `(ky, kx, c_in)`.
fn im2col<T: Scalar>(
    x: &[T],
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    pad: usize,
    y0: usize,
    y1: usize,
    cols: &mut [T],
) {
    let taps = k * k * c;
    for y in y0..y1 {
        for xx in 0..w {
            let row = &mut cols[((y - y0) * w + xx) * taps..][..taps];
            for ky in 0..k {
                let sy = y as isize + ky as isize - pad as isize;
                for kx in 0..k {
                    let sx = xx as isize + kx as isize - pad as isize;
                    let dst = &mut row[(ky * k + kx) * c..][..c];
                    if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                        dst.fill(T::zero());
                    } else {
                        let src = (sy as usize * w + sx as usize) * c;
                        dst.copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
}

/// Scatter-adds unrolled gradients back onto the padded input grid.
fn col2im<T: Scalar>(
    cols: &[T],
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    pad: usize,
    y0: usize,
    y1: usize,
    grad: &mut [T],
) {
    let taps = k * k * c;
    for y in y0..y1 {
        for xx in 0..w {
            let row = &cols[((y - y0) * w + xx) * taps..][..taps];
            for ky in 0..k {
                let sy = y as isize + ky as isize - pad as isize;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let sx = xx as isize + kx as isize - pad as isize;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let dst = (sy as usize * w + sx as usize) * c;
                    let src = &row[(ky * k + kx) * c..][..c];
                    for (g, &v) in grad[dst..dst + c].iter_mut().zip(src) {
                        *g += v;
                    }
                }
            }
        }
    }
}

fn forward_sample<T: Scalar>(x: &[T], s: Shape4, kernel: &ConvKernel<T>, out: &mut [T]) {
    let (h, w, c_in, c_out) = (s.h, s.w, s.c, kernel.c_out());
    let wmat = MatLayout::row_major(kernel.taps(), c_out);
    let wdata = kernel.weights.data();
    if kernel.kh() == 1 {
        let pixels = h * w;
        gemm(
            x,
            MatLayout::row_major(pixels, c_in),
            wdata,
            wmat,
            T::zero(),
            out,
            MatLayout::row_major(pixels, c_out),
        );
        return;
    }
    let taps = kernel.taps();
    let rows = strip_rows(w, taps, h);
    let mut cols = vec![T::zero(); rows * w * taps];
    for y0 in (0..h).step_by(rows) {
        let y1 = (y0 + rows).min(h);
        let pixels = (y1 - y0) * w;
        im2col(
            x,
            h,
            w,
            c_in,
            kernel.kh(),
            kernel.padding,
            y0,
            y1,
            &mut cols,
        );
        gemm(
            &cols,
            MatLayout::row_major(pixels, taps),
            wdata,
            wmat,
            T::zero(),
            &mut out[y0 * w * c_out..y1 * w * c_out],
            MatLayout::row_major(pixels, c_out),
        );
    }
}

/// Stride-1, size-preserving 2-D convolution (cross-correlation) via
/// patch unrolling and a matrix product.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor4<T>,
    kernel: &ConvKernel<T>,
) -> Result<Tensor4<T>, NumericsError> {
    let s = input.shape();
    check_input(s, kernel)?;
    let out_shape = s.with_channels(kernel.c_out());
    let mut out = Tensor4::zeros(out_shape)?;
    let in_len = s.sample_len();
    out.data_mut()
        .par_chunks_mut(out_shape.sample_len())
        .zip(input.data().par_chunks(in_len))
        .for_each(|(o, x)| forward_sample(x, s, kernel, o));
    Ok(out)
}

/// Returns the sample's weight gradient and writes its input gradient.
fn backward_sample<T: Scalar>(
    gout: &[T],
    x: &[T],
    s: Shape4,
    kernel: &ConvKernel<T>,
    gin: &mut [T],
) -> Vec<T> {
    let (h, w, c_in, c_out) = (s.h, s.w, s.c, kernel.c_out());
    let taps = kernel.taps();
    let wmat = MatLayout::row_major(taps, c_out);
    let wdata = kernel.weights.data();
    let mut gw = vec![T::zero(); taps * c_out];
    if kernel.kh() == 1 {
        let pixels = h * w;
        let xl = MatLayout::row_major(pixels, c_in);
        let gl = MatLayout::row_major(pixels, c_out);
        gemm(x, xl.t(), gout, gl, T::zero(), &mut gw, wmat);
        gemm(gout, gl, wdata, wmat.t(), T::zero(), gin, xl);
        return gw;
    }
    let rows = strip_rows(w, taps, h);
    let mut cols = vec![T::zero(); rows * w * taps];
    let mut gcols = vec![T::zero(); rows * w * taps];
    for y0 in (0..h).step_by(rows) {
        let y1 = (y0 + rows).min(h);
        let pixels = (y1 - y0) * w;
        let cl = MatLayout::row_major(pixels, taps);
        let gl = MatLayout::row_major(pixels, c_out);
        let g = &gout[y0 * w * c_out..y1 * w * c_out];
        im2col(
            x,
            h,
            w,
            c_in,
            kernel.kh(),
            kernel.padding,
            y0,
            y1,
            &mut cols,
        );
        gemm(&cols, cl.t(), g, gl, T::one(), &mut gw, wmat);
        gemm(g, gl, wdata, wmat.t(), T::zero(), &mut gcols, cl);
        col2im(&gcols, h, w, c_in, kernel.kh(), kernel.padding, y0, y1, gin);
    }
    gw
}

/// Gradients of [`conv2d_forward`] with respect to its input and weights.
///
/// Per-sample weight gradients are summed in batch order, so the result does
/// not depend on how samples were distributed across threads.
pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    input: &Tensor4<T>,
    kernel: &ConvKernel<T>,
) -> Result<(Tensor4<T>, Tensor4<T>), NumericsError> {
    let s = input.shape();
    check_input(s, kernel)?;
    let expected = s.with_channels(kernel.c_out());
    if grad_out.shape() != expected {
        return Err(NumericsError::ShapeMismatch {
            context: "conv2d grad_out",
            expected,
            actual: grad_out.shape(),
        });
    }
    let mut grad_in = Tensor4::zeros(s)?;
    let per_sample: Vec<Vec<T>> = grad_in
        .data_mut()
        .par_chunks_mut(s.sample_len())
        .zip(input.data().par_chunks(s.sample_len()))
        .zip(grad_out.data().par_chunks(expected.sample_len()))
        .map(|((gi, x), go)| backward_sample(go, x, s, kernel, gi))
        .collect();
    let mut gw = vec![T::zero(); kernel.weights.shape().len()];
    for sample in &per_sample {
        for (acc, &v) in gw.iter_mut().zip(sample) {
            *acc += v;
        }
    }
    let grad_w = Tensor4::from_vec(kernel.weights.shape(), gw)?;
    Ok((grad_in, grad_w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::testing::{central_difference, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct six-nested-loop convolution used as the reference.
    fn conv_oracle(x: &Tensor4<f64>, k: &ConvKernel<f64>) -> Tensor4<f64> {
        let s = x.shape();
        let pad = k.padding() as isize;
        Tensor4::from_fn(s.with_channels(k.c_out()), |n, y, xx, co| {
            let mut acc = 0.0;
            for ky in 0..k.kh() {
                for kx in 0..k.kw() {
                    let sy = y as isize + ky as isize - pad;
                    let sx = xx as isize + kx as isize - pad;
                    if sy < 0 || sx < 0 || sy >= s.h as isize || sx >= s.w as isize {
                        continue;
                    }
                    for ci in 0..s.c {
                        acc += k.weights().get(ky, kx, ci, co)
                            * x.get(n, sy as usize, sx as usize, ci);
                    }
                }
            }
            acc
        })
        .unwrap()
    }

    fn kernel(rng: &mut ChaCha8Rng, k: usize, c_in: usize, c_out: usize) -> ConvKernel<f64> {
        ConvKernel::new(
            random_tensor(rng, Shape4::new(k, k, c_in, c_out)),
            (k - 1) / 2,
        )
        .unwrap()
    }

    #[test]
    fn center_tap_only_on_single_pixel() {
        let mut w = Tensor4::<f64>::zeros(Shape4::new(3, 3, 1, 1)).unwrap();
        for (i, v) in w.data_mut().iter_mut().enumerate() {
            *v = i as f64 + 1.0;
        }
        let k = ConvKernel::new(w, 1).unwrap();
        let x = Tensor4::from_vec(Shape4::new(1, 1, 1, 1), vec![2.5]).unwrap();
        let y = conv2d_forward(&x, &k).unwrap();
        assert_eq!(y.data(), &[2.5 * 5.0]);
    }

    #[test]
    fn identity_kernel_copies_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut w = Tensor4::<f64>::zeros(Shape4::new(3, 3, 1, 1)).unwrap();
        w.set(1, 1, 0, 0, 1.0);
        let k = ConvKernel::new(w, 1).unwrap();
        let x = random_tensor(&mut rng, Shape4::new(2, 7, 5, 1));
        assert_eq!(conv2d_forward(&x, &k).unwrap(), x);
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_tensor(&mut rng, Shape4::new(1, 5, 5, 2));
        let k = kernel(&mut rng, 3, 2, 4);
        let got = conv2d_forward(&x, &k).unwrap();
        let want = conv_oracle(&x, &k);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0), "{a} vs {b}");
        }
        let k1 = kernel(&mut rng, 1, 2, 3);
        let got = conv2d_forward(&x, &k1).unwrap();
        let want = conv_oracle(&x, &k1);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
        }
    }

    #[test]
    fn strips_agree_with_single_pass() {
        // Wide enough that the unrolled matrix is split into several strips.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(&mut rng, Shape4::new(1, 9, 4100, 64));
        let k = kernel(&mut rng, 3, 64, 2);
        assert!(strip_rows(4100, 576, 9) < 9);
        let got = conv2d_forward(&x, &k).unwrap();
        for &(y, xx) in &[(0, 0), (4, 2050), (8, 4099), (3, 17)] {
            for co in 0..2 {
                let mut acc = 0.0;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let sy = y as isize + ky - 1;
                        let sx = xx as isize + kx - 1;
                        if sy < 0 || sx < 0 || sy >= 9 || sx >= 4100 {
                            continue;
                        }
                        for ci in 0..64 {
                            acc += k.weights().get(ky as usize, kx as usize, ci, co)
                                * x.get(0, sy as usize, sx as usize, ci);
                        }
                    }
                }
                assert!((got.get(0, y, xx, co) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let k = ConvKernel::<f32>::zeros(3, 3, 4, 2, 1).unwrap();
        let x = Tensor4::<f32>::zeros(Shape4::new(1, 4, 4, 3)).unwrap();
        let err = conv2d_forward(&x, &k).unwrap_err();
        assert!(matches!(
            err,
            NumericsError::ChannelMismatch {
                expected: 4,
                actual: 3,
                ..
            }
        ));
    }

    #[test]
    fn rejects_inconsistent_padding() {
        assert!(ConvKernel::<f32>::zeros(3, 3, 1, 1, 0).is_err());
        assert!(ConvKernel::<f32>::zeros(1, 1, 1, 1, 1).is_err());
        assert!(ConvKernel::<f32>::zeros(5, 5, 1, 1, 2).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&mut rng, Shape4::new(2, 4, 4, 3));
        let k = kernel(&mut rng, 3, 3, 2);
        let g = Tensor4::zeros(Shape4::new(2, 4, 4, 2)).unwrap();
        let (gi, gw) = conv2d_backward(&g, &x, &k).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
        assert!(gw.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pointwise_weight_gradient_by_hand() {
        // 2x2 single-sample input with 2 channels, 1x1 kernel 2 -> 1.
        // dL/dW[ci][co] = sum over pixels of x[p][ci] * g[p][co].
        let x = Tensor4::from_vec(
            Shape4::new(1, 2, 2, 2),
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
        )
        .unwrap();
        let g = Tensor4::from_vec(Shape4::new(1, 2, 2, 1), vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let k = ConvKernel::new(
            Tensor4::from_vec(Shape4::new(1, 1, 2, 1), vec![0.3, -0.7]).unwrap(),
            0,
        )
        .unwrap();
        let (gi, gw) = conv2d_backward(&g, &x, &k).unwrap();
        // channel 0: 1*1 + 3*(-1) + 5*0.5 + 7*2 = 14.5
        // channel 1: 2*1 + 4*(-1) + 6*0.5 + 8*2 = 17
        assert_eq!(gw.data(), &[14.5, 17.0]);
        let want: Vec<f64> = [1.0, -1.0, 0.5, 2.0]
            .iter()
            .flat_map(|&gv| [gv * 0.3, gv * -0.7])
            .collect();
        assert_eq!(gi.data(), want.as_slice());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for &(k, c_in, c_out) in &[(3usize, 3usize, 4usize), (1, 4, 3)] {
            let x = random_tensor(&mut rng, Shape4::new(2, 5, 6, c_in));
            let kern = kernel(&mut rng, k, c_in, c_out);
            let proj = random_tensor(&mut rng, x.shape().with_channels(c_out));
            let loss = |x: &Tensor4<f64>, k: &ConvKernel<f64>| -> f64 {
                let y = conv2d_forward(x, k).unwrap();
                y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
            };
            let (gi, gw) = conv2d_backward(&proj, &x, &kern).unwrap();
            let num_x = central_difference(x.data(), 1e-5, |d| {
                loss(&Tensor4::from_vec(x.shape(), d.to_vec()).unwrap(), &kern)
            });
            let num_w = central_difference(kern.weights().data(), 1e-5, |d| {
                let w = Tensor4::from_vec(kern.weights().shape(), d.to_vec()).unwrap();
                loss(&x, &ConvKernel::new(w, kern.padding()).unwrap())
            });
            for (a, n) in gi
                .data()
                .iter()
                .zip(&num_x)
                .chain(gw.data().iter().zip(&num_w))
            {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-12);
                assert!(rel < 1e-4, "analytic {a} numeric {n}");
            }
        }
    }

    #[test]
    fn batch_gradients_do_not_depend_on_thread_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = random_tensor(&mut rng, Shape4::new(6, 8, 8, 5)).cast::<f32>();
        let k = kernel(&mut rng, 3, 5, 7).cast::<f32>();
        let g = random_tensor(&mut rng, x.shape().with_channels(7)).cast::<f32>();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    let y = conv2d_forward(&x, &k).unwrap();
                    let (gi, gw) = conv2d_backward(&g, &x, &k).unwrap();
                    (y, gi, gw)
                })
        };
        assert_eq!(run(1), run(4));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn preserves_spatial_dims(h in 1usize..9, w in 1usize..9, k in prop::sample::select(vec![1usize, 3]), seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = random_tensor(&mut rng, Shape4::new(1, h, w, 2));
                let kern = kernel(&mut rng, k, 2, 3);
                let y = conv2d_forward(&x, &kern).unwrap();
                prop_assert_eq!(y.shape(), Shape4::new(1, h, w, 3));
            }

            #[test]
            fn is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let s = Shape4::new(2, 5, 4, 3);
                let x = random_tensor(&mut rng, s);
                let z = random_tensor(&mut rng, s);
                let kern = kernel(&mut rng, 3, 3, 2);
                let mix = Tensor4::from_vec(s, x.data().iter().zip(z.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
                let lhs = conv2d_forward(&mix, &kern).unwrap();
                let fx = conv2d_forward(&x, &kern).unwrap();
                let fz = conv2d_forward(&z, &kern).unwrap();
                for ((l, p), q) in lhs.data().iter().zip(fx.data()).zip(fz.data()) {
                    prop_assert!((l - (a * p + b * q)).abs() < 1e-5);
                }
            }
        }
    }
}
