//! Forward kernels for the network's differentiable operations, together
//! with the vector-Jacobian products the autodiff tape calls.
//!
//! `conv2d` is a cross-correlation: the kernel is applied without flipping.
//! `conv1d` keeps the textbook convolution orientation,
//! `out[i] = Σ_k h[k]·f[i−k]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::gemm::gemm;
use crate::tensor::Tensor;

/// Probabilities below this are clamped before taking the logarithm.
pub const PROB_FLOOR: f64 = 1e-15;

fn expect_rank(t: &Tensor, rank: usize, what: &str) -> Result<()> {
    if t.rank() != rank {
        bail!(Shape, "{what} must be rank {rank}, got shape {:?}", t.shape());
    }
    Ok(())
}

// ---------------------------------------------------------------- conv1d

pub(crate) fn conv1d_check(signal_len: usize, kernel_len: usize, padding: usize) -> Result<usize> {
    if kernel_len % 2 == 0 {
        bail!(Config, "conv1d kernel length must be odd, got {kernel_len}");
    }
    let padded = signal_len + 2 * padding;
    if kernel_len > padded {
        bail!(
            Shape,
            "conv1d kernel of length {kernel_len} exceeds padded signal length {padded}"
        );
    }
    Ok(padded - kernel_len + 1)
}

fn padded_at(signal: &[f64], padding: usize, index: usize) -> f64 {
    if index < padding {
        0.0
    } else {
        signal.get(index - padding).copied().unwrap_or(0.0)
    }
}

pub(crate) fn conv1d_raw(signal: &[f64], kernel: &[f64], padding: usize) -> Result<Vec<f64>> {
    let out_len = conv1d_check(signal.len(), kernel.len(), padding)?;
    let k = kernel.len();
    Ok((0..out_len)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, &h)| h * padded_at(signal, padding, i + k - 1 - j))
                .sum()
        })
        .collect())
}

pub(crate) fn conv1d_backward(
    signal: &[f64],
    kernel: &[f64],
    padding: usize,
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let k = kernel.len();
    let mut d_signal = vec![0.0; signal.len()];
    let mut d_kernel = vec![0.0; k];
    for (i, &g) in grad_out.iter().enumerate() {
        for (j, &h) in kernel.iter().enumerate() {
            let p = i + k - 1 - j;
            if p >= padding && p - padding < signal.len() {
                d_signal[p - padding] += g * h;
                d_kernel[j] += g * signal[p - padding];
            }
        }
    }
    (d_signal, d_kernel)
}

/// 1-D convolution with zero padding; `kernel` holds taps `h[−T..=T]`.
pub fn conv1d(signal: &Tensor, kernel: &Tensor, padding: usize) -> Result<Tensor> {
    expect_rank(signal, 1, "conv1d signal")?;
    expect_rank(kernel, 1, "conv1d kernel")?;
    Ok(Tensor::from_vec(conv1d_raw(signal.data(), kernel.data(), padding)?))
}

// ---------------------------------------------------------------- conv2d

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernels: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if input.len() != 3 {
            bail!(Shape, "conv2d input must be C×H×W, got {:?}", input);
        }
        if kernels.len() != 4 {
            bail!(Shape, "conv2d kernels must be F×C×Kh×Kw, got {:?}", kernels);
        }
        let (c, h, w) = (input[0], input[1], input[2]);
        let (f, kc, kh, kw) = (kernels[0], kernels[1], kernels[2], kernels[3]);
        if kc != c {
            bail!(Shape, "conv2d kernels expect {kc} input channels, input has {c}");
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            bail!(Config, "conv2d kernel extents must be odd, got {kh}×{kw}");
        }
        if stride == 0 {
            bail!(Config, "conv2d stride must be positive");
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            bail!(
                Shape,
                "conv2d kernel {kh}×{kw} larger than padded input {}×{}",
                h + 2 * padding,
                w + 2 * padding
            );
        }
        Ok(ConvGeometry {
            channels: c,
            height: h,
            width: w,
            filters: f,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input coordinate read by output index `o` at kernel offset `k`, if it
    /// falls inside the unpadded input.
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let p = o * self.stride + k;
        if p < self.padding || p - self.padding >= extent {
            None
        } else {
            Some(p - self.padding)
        }
    }

    /// Output columns `lo..hi` whose input column at kernel offset `kj`
    /// lies inside the unpadded input.
    fn valid_columns(&self, kj: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if kj >= self.padding { 0 } else { (self.padding - kj).div_ceil(s) };
        let hi = if self.width + self.padding > kj {
            ((self.width + self.padding - 1 - kj) / s + 1).min(self.out_w)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    /// Unfolds the input into a `patch_len × out_len` matrix.
    pub fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let n = self.out_len();
        let mut cols = vec![0.0; self.patch_len() * n];
        let mut row = 0;
        for c in 0..self.channels {
            let plane = &input[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..self.kernel_h {
                for kj in 0..self.kernel_w {
                    let (lo, hi) = self.valid_columns(kj);
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..self.out_h {
                        let Some(iy) = self.source(oy, ki, self.height) else {
                            continue;
                        };
                        if lo == hi {
                            continue;
                        }
                        let src = &plane[iy * self.width..(iy + 1) * self.width];
                        let out_row = &mut dst[oy * self.out_w + lo..oy * self.out_w + hi];
                        let first = lo * self.stride + kj - self.padding;
                        if self.stride == 1 {
                            out_row.copy_from_slice(&src[first..first + (hi - lo)]);
                        } else {
                            for (d, v) in out_row.iter_mut().zip(src[first..].iter().step_by(self.stride)) {
                                *d = *v;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
        cols
    }

    /// Adjoint of [`Self::im2col`].
    pub fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let n = self.out_len();
        let mut input = vec![0.0; self.channels * self.height * self.width];
        let mut row = 0;
        for c in 0..self.channels {
            let plane =
                &mut input[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..self.kernel_h {
                for kj in 0..self.kernel_w {
                    let (lo, hi) = self.valid_columns(kj);
                    let src = &cols[row * n..(row + 1) * n];
                    for oy in 0..self.out_h {
                        let Some(iy) = self.source(oy, ki, self.height) else {
                            continue;
                        };
                        if lo == hi {
                            continue;
                        }
                        let first = iy * self.width + lo * self.stride + kj - self.padding;
                        let from = &src[oy * self.out_w + lo..oy * self.out_w + hi];
                        for (d, v) in plane[first..].iter_mut().step_by(self.stride).zip(from) {
                            *d += v;
                        }
                    }
                    row += 1;
                }
            }
        }
        input
    }
}

/// Forward conv2d returning the output and the unfolded input for reuse in
/// the backward pass.
pub(crate) fn conv2d_raw(
    geo: &ConvGeometry,
    input: &[f64],
    kernels: &[f64],
    bias: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let cols = geo.im2col(input);
    let n = geo.out_len();
    let mut out = vec![0.0; geo.filters * n];
    for (f, row) in out.chunks_mut(n).enumerate() {
        row.fill(bias[f]);
    }
    gemm(geo.filters, geo.patch_len(), n, kernels, false, &cols, false, 1.0, &mut out);
    (out, cols)
}

/// Returns `(d_input, d_kernels, d_bias)`; `d_input` is skipped when not needed.
pub(crate) fn conv2d_backward(
    geo: &ConvGeometry,
    cols: &[f64],
    kernels: &[f64],
    grad_out: &[f64],
    want_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let n = geo.out_len();
    let k = geo.patch_len();
    let mut d_kernels = vec![0.0; geo.filters * k];
    gemm(geo.filters, n, k, grad_out, false, cols, true, 0.0, &mut d_kernels);
    let d_bias = grad_out.chunks(n).map(|row| row.iter().sum()).collect();
    let d_input = want_input.then(|| {
        let mut d_cols = vec![0.0; k * n];
        gemm(k, geo.filters, n, kernels, true, grad_out, false, 0.0, &mut d_cols);
        geo.col2im(&d_cols)
    });
    (d_input, d_kernels, d_bias)
}

pub(crate) fn check_bias(bias: &Tensor, filters: usize) -> Result<()> {
    if bias.rank() != 1 || bias.len() != filters {
        bail!(Shape, "bias of shape {:?} for {filters} outputs", bias.shape());
    }
    Ok(())
}

/// Multi-channel 2-D cross-correlation plus per-filter bias.
pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let geo = ConvGeometry::new(input.shape(), kernels.shape(), stride, padding)?;
    check_bias(bias, geo.filters)?;
    let (out, _) = conv2d_raw(&geo, input.data(), kernels.data(), bias.data());
    Tensor::new(&[geo.filters, geo.out_h, geo.out_w], out)
}

// ---------------------------------------------------------------- pooling

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PoolGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub window: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PoolGeometry {
    pub fn new(shape: &[usize], window: usize, stride: usize) -> Result<Self> {
        if shape.len() != 3 {
            bail!(Shape, "maxpool2d input must be C×H×W, got {:?}", shape);
        }
        if window == 0 || stride == 0 {
            bail!(Config, "maxpool2d window and stride must be positive");
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        if h < window || w < window {
            bail!(Shape, "maxpool2d window {window} larger than input {h}×{w}");
        }
        Ok(PoolGeometry {
            channels: c,
            height: h,
            width: w,
            window,
            stride,
            out_h: (h - window) / stride + 1,
            out_w: (w - window) / stride + 1,
        })
    }
}

/// Returns pooled values and the flat input index each one came from.
pub(crate) fn maxpool_raw(geo: &PoolGeometry, input: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let count = geo.channels * geo.out_h * geo.out_w;
    let mut out = Vec::with_capacity(count);
    let mut arg = Vec::with_capacity(count);
    for c in 0..geo.channels {
        let base = c * geo.height * geo.width;
        for oy in 0..geo.out_h {
            for ox in 0..geo.out_w {
                let mut best = base + oy * geo.stride * geo.width + ox * geo.stride;
                for dy in 0..geo.window {
                    for dx in 0..geo.window {
                        let idx = base + (oy * geo.stride + dy) * geo.width + ox * geo.stride + dx;
                        // strict comparison keeps the first maximum in row-major order
                        if input[idx] > input[best] {
                            best = idx;
                        }
                    }
                }
                out.push(input[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

/// Max pooling; trailing rows and columns that do not fill a window are dropped.
pub fn maxpool2d(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let geo = PoolGeometry::new(input.shape(), window, stride)?;
    let (out, _) = maxpool_raw(&geo, input.data());
    Tensor::new(&[geo.channels, geo.out_h, geo.out_w], out)
}

// ---------------------------------------------------------------- linear

pub(crate) fn linear_check(input: &[usize], weights: &[usize], bias: &[usize]) -> Result<(usize, usize)> {
    if input.len() != 1 || weights.len() != 2 || bias.len() != 1 {
        bail!(
            Shape,
            "linear expects vector input, matrix weights and vector bias, got {:?}, {:?}, {:?}",
            input,
            weights,
            bias
        );
    }
    let (m, n) = (weights[0], weights[1]);
    if input[0] != n || bias[0] != m {
        bail!(
            Shape,
            "linear weights {m}×{n} do not fit input of {} and bias of {}",
            input[0],
            bias[0]
        );
    }
    Ok((m, n))
}

pub(crate) fn linear_raw(input: &[f64], weights: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = input.len();
    weights
        .chunks_exact(n)
        .zip(bias)
        .map(|(row, b)| b + dot(row, input))
        .collect()
}

/// Returns `(d_input, d_weights)`; the bias gradient equals `grad_out`.
pub(crate) fn linear_backward(
    input: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    want_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>) {
    let n = input.len();
    let mut d_weights = vec![0.0; weights.len()];
    for (row, &g) in d_weights.chunks_exact_mut(n).zip(grad_out) {
        if g != 0.0 {
            for (d, &x) in row.iter_mut().zip(input) {
                *d = g * x;
            }
        }
    }
    let d_input = want_input.then(|| {
        let mut d = vec![0.0; n];
        for (row, &g) in weights.chunks_exact(n).zip(grad_out) {
            if g != 0.0 {
                for (acc, &w) in d.iter_mut().zip(row) {
                    *acc += w * g;
                }
            }
        }
        d
    });
    (d_input, d_weights)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators so the loop vectorizes; order is fixed, so results
    // are reproducible
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `weights · input + bias` for a weight matrix of shape m×n.
pub fn linear(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    linear_check(input.shape(), weights.shape(), bias.shape())?;
    Ok(Tensor::from_vec(linear_raw(input.data(), weights.data(), bias.data())))
}

// ---------------------------------------------------------------- activations

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub(crate) fn softmax_raw(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        bail!(Shape, "softmax of an empty score vector");
    }
    if let Some(bad) = scores.iter().find(|v| !v.is_finite()) {
        bail!(Numeric, "softmax input contains non-finite score {bad}");
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| libm::exp(s - max)).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Normalized exponential of a score vector, computed after subtracting the maximum.
pub fn softmax(scores: &Tensor) -> Result<Tensor> {
    expect_rank(scores, 1, "softmax input")?;
    Ok(Tensor::from_vec(softmax_raw(scores.data())?))
}

pub(crate) fn cross_entropy_raw(probs: &[f64], true_class: usize) -> Result<f64> {
    match probs.get(true_class) {
        Some(&p) => Ok(-libm::log(p.max(PROB_FLOOR))),
        None => bail!(
            Config,
            "class index {true_class} out of range for {} classes",
            probs.len()
        ),
    }
}

/// Negative log-probability of the true class.
pub fn cross_entropy(probs: &Tensor, true_class: usize) -> Result<f64> {
    expect_rank(probs, 1, "cross_entropy input")?;
    cross_entropy_raw(probs.data(), true_class)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn conv1d_identity_and_centered_delta() {
        let s = t(&[3], &[1.0, 2.0, 3.0]);
        assert_eq!(conv1d(&s, &t(&[1], &[1.0]), 0).unwrap().data(), &[1.0, 2.0, 3.0]);
        let s = t(&[4], &[1.0, 2.0, 3.0, 4.0]);
        let out = conv1d(&s, &t(&[3], &[0.0, 1.0, 0.0]), 1).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv1d_rejects_even_and_oversized_kernels() {
        let s = t(&[3], &[1.0, 2.0, 3.0]);
        assert!(matches!(conv1d(&s, &t(&[2], &[1.0, 1.0]), 0), Err(crate::Error::Config(_))));
        assert!(matches!(conv1d(&s, &t(&[5], &[1.0; 5]), 0), Err(crate::Error::Shape(_))));
        assert!(conv1d(&s, &t(&[5], &[1.0; 5]), 1).is_ok());
    }

    #[test]
    fn conv2d_scalar_kernel_and_identity() {
        let ones = Tensor::full(&[1, 3, 3], 1.0);
        let out = conv2d(&ones, &t(&[1, 1, 1, 1], &[2.0]), &t(&[1], &[0.0]), 1, 0).unwrap();
        assert_eq!(out.shape(), &[1, 3, 3]);
        assert!(out.data().iter().all(|&v| v == 2.0));

        let input = Tensor::new(&[1, 5, 5], (0..25).map(|v| v as f64).collect()).unwrap();
        let mut delta = [0.0; 9];
        delta[4] = 1.0;
        let out = conv2d(&input, &t(&[1, 1, 3, 3], &delta), &t(&[1], &[0.0]), 1, 1).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn conv2d_shape_errors() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let k = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(matches!(conv2d(&x, &k, &Tensor::zeros(&[1]), 1, 1), Err(crate::Error::Shape(_))));
        let k = Tensor::zeros(&[1, 2, 2, 2]);
        assert!(matches!(conv2d(&x, &k, &Tensor::zeros(&[1]), 1, 1), Err(crate::Error::Config(_))));
        let k = Tensor::zeros(&[1, 2, 7, 7]);
        assert!(conv2d(&x, &k, &Tensor::zeros(&[1]), 1, 0).is_err());
        let k = Tensor::zeros(&[1, 2, 3, 3]);
        assert!(conv2d(&x, &k, &Tensor::zeros(&[2]), 1, 0).is_err());
    }

    #[test]
    fn conv2d_stride_output_extent() {
        let x = Tensor::full(&[1, 7, 6], 1.0);
        let k = Tensor::full(&[2, 1, 3, 3], 1.0);
        let out = conv2d(&x, &k, &Tensor::zeros(&[2]), 2, 1).unwrap();
        assert_eq!(out.shape(), &[2, 4, 3]);
        // top-left window sees a 2×2 corner of ones
        assert_eq!(out.data()[0], 4.0);
    }

    #[test]
    fn maxpool_single_window_constant_and_odd_extent() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(maxpool2d(&x, 2, 2).unwrap().data(), &[4.0]);
        let c = Tensor::full(&[2, 5, 7], 0.3);
        let out = maxpool2d(&c, 2, 2).unwrap();
        assert_eq!(out.shape(), &[2, 2, 3]);
        assert!(out.data().iter().all(|&v| v == 0.3));
        assert!(matches!(maxpool2d(&Tensor::zeros(&[1, 1, 4]), 2, 2), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn maxpool_ties_route_to_first_index() {
        let geo = PoolGeometry::new(&[1, 2, 2], 2, 2).unwrap();
        let (_, arg) = maxpool_raw(&geo, &[5.0, 5.0, 5.0, 5.0]);
        assert_eq!(arg, vec![0]);
        let (_, arg) = maxpool_raw(&geo, &[1.0, 5.0, 5.0, 2.0]);
        assert_eq!(arg, vec![1]);
    }

    #[test]
    fn linear_identity_and_bias_only() {
        let x = t(&[3], &[1.0, -2.0, 0.5]);
        let eye = t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(linear(&x, &eye, &Tensor::zeros(&[3])).unwrap(), x);
        let b = t(&[2], &[0.25, -4.0]);
        assert_eq!(linear(&x, &Tensor::zeros(&[2, 3]), &b).unwrap(), b);
        assert!(linear(&x, &Tensor::zeros(&[2, 4]), &b).is_err());
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&t(&[3], &[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        assert!(relu(&t(&[3], &[-1.0, -0.1, -7.0])).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_uniform_and_errors() {
        let p = softmax(&Tensor::zeros(&[6])).unwrap();
        for &v in p.data() {
            assert!((v - 1.0 / 6.0).abs() < 1e-15);
        }
        assert!(matches!(
            softmax(&t(&[2], &[0.0, f64::NAN])),
            Err(crate::Error::Numeric(_))
        ));
        assert!(matches!(
            softmax(&t(&[2], &[0.0, f64::INFINITY])),
            Err(crate::Error::Numeric(_))
        ));
    }

    #[test]
    fn cross_entropy_examples() {
        let certain = t(&[3], &[0.0, 1.0, 0.0]);
        assert_eq!(cross_entropy(&certain, 1).unwrap(), 0.0);
        // p_true = 0 is clamped, not infinite
        let loss = cross_entropy(&certain, 0).unwrap();
        assert!((loss - (-libm::log(PROB_FLOOR))).abs() < 1e-12);
        let uniform = Tensor::full(&[6], 1.0 / 6.0);
        assert!((cross_entropy(&uniform, 3).unwrap() - libm::log(6.0)).abs() < 1e-12);
        assert!(matches!(cross_entropy(&uniform, 6), Err(crate::Error::Config(_))));
    }
}
