//! The five layer kinds used by both networks, each with its adjoint.
//!
//! Forward functions are pure. Backward functions take whatever the forward
//! pass needs to be replayed (inputs, outputs, argmax or dropout masks) and
//! return gradients with the same shapes as the corresponding inputs.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, Result};
use crate::rng::Rng;
use crate::tensor::{s, Scalar, Tensor};

/// Output extent of a convolution along one axis.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

struct ConvGeometry {
    c_in: usize,
    c_out: usize,
    k: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

fn conv_geometry<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry> {
    let (c_in, h, w) = input.dims3()?;
    let [c_out, wc_in, k, k2] = weights.shape()[..] else {
        return Err(dim_err!(
            "conv weights must be C_out×C_in×k×k, got {:?}",
            weights.shape()
        ));
    };
    if k != k2 {
        return Err(dim_err!("conv kernel must be square, got {k}×{k2}"));
    }
    if wc_in != c_in {
        return Err(dim_err!(
            "conv input has {c_in} channels but weights expect {wc_in}"
        ));
    }
    if stride == 0 {
        return Err(param_err!("conv stride must be at least 1"));
    }
    let (ph, pw) = (h + 2 * padding, w + 2 * padding);
    if k > ph || k > pw {
        return Err(dim_err!(
            "kernel {k} larger than padded input {ph}×{pw}"
        ));
    }
    Ok(ConvGeometry {
        c_in,
        c_out,
        k,
        h,
        w,
        oh: conv_out_extent(h, k, stride, padding),
        ow: conv_out_extent(w, k, stride, padding),
    })
}

/// Output columns `lo..hi` whose tap at kernel column `kx` lands inside the
/// unpadded input.
fn valid_span(ow: usize, w: usize, stride: usize, kx: usize, padding: usize) -> (usize, usize) {
    let lo = padding.saturating_sub(kx).div_ceil(stride);
    // ox·stride + kx − padding < w  ⇔  ox·stride < w + padding − kx
    let hi = (w + padding).saturating_sub(kx).div_ceil(stride).min(ow);
    (lo.min(hi), hi)
}

/// Unfolds the input into a `(C_in·k·k) × (OH·OW)` matrix. Positions that
/// fall into the zero padding read as zero.
fn im2col<T: Scalar>(input: &[T], g: &ConvGeometry, stride: usize, padding: usize) -> Vec<T> {
    let n = g.oh * g.ow;
    let mut col = vec![T::zero(); g.c_in * g.k * g.k * n];
    for ci in 0..g.c_in {
        let plane = &input[ci * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &mut col[((ci * g.k + ky) * g.k + kx) * n..][..n];
                for oy in 0..g.oh {
                    let Some(y) = (oy * stride + ky).checked_sub(padding).filter(|&y| y < g.h) else {
                        continue;
                    };
                    let src = &plane[y * g.w..][..g.w];
                    let dst = &mut row[oy * g.ow..][..g.ow];
                    let (lo, hi) = valid_span(g.ow, g.w, stride, kx, padding);
                    if stride == 1 {
                        let x0 = lo + kx - padding;
                        dst[lo..hi].copy_from_slice(&src[x0..x0 + hi - lo]);
                    } else {
                        for ox in lo..hi {
                            dst[ox] = src[ox * stride + kx - padding];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: accumulates matrix entries back onto the input.
fn col2im<T: Scalar>(col: &[T], g: &ConvGeometry, stride: usize, padding: usize) -> Vec<T> {
    let n = g.oh * g.ow;
    let mut out = vec![T::zero(); g.c_in * g.h * g.w];
    for ci in 0..g.c_in {
        let plane = &mut out[ci * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &col[((ci * g.k + ky) * g.k + kx) * n..][..n];
                for oy in 0..g.oh {
                    let Some(y) = (oy * stride + ky).checked_sub(padding).filter(|&y| y < g.h) else {
                        continue;
                    };
                    let dst = &mut plane[y * g.w..][..g.w];
                    let src = &row[oy * g.ow..][..g.ow];
                    let (lo, hi) = valid_span(g.ow, g.w, stride, kx, padding);
                    for ox in lo..hi {
                        let x = ox * stride + kx - padding;
                        dst[x] = dst[x] + src[ox];
                    }
                }
            }
        }
    }
    out
}

const MR: usize = 4;
const NR: usize = 8;

#[inline(always)]
fn axpy_tile<T: Scalar>(acc: &mut [T; NR], av: T, bv: &[T; NR]) {
    for q in 0..NR {
        acc[q] = acc[q] + av * bv[q];
    }
}

/// `c += a · b` for row-major `a: m×kk`, `b: kk×n`, `c: m×n`. Full 4×8 tiles
/// of `c` stay in registers across the inner dimension; edges fall back to
/// a plain loop. Every output element is accumulated in `kk` order either
/// way, so tiling does not change results.
fn gemm_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, kk: usize, n: usize) {
    let full_m = m - m % MR;
    let full_n = n - n % NR;
    for i in (0..full_m).step_by(MR) {
        let rows: [&[T]; MR] = std::array::from_fn(|r| &a[(i + r) * kk..][..kk]);
        for j in (0..full_n).step_by(NR) {
            let mut acc: [[T; NR]; MR] = std::array::from_fn(|r| c[(i + r) * n + j..][..NR].try_into().unwrap());
            for p in 0..kk {
                let bv: &[T; NR] = b[p * n + j..][..NR].try_into().unwrap();
                let [c0, c1, c2, c3] = &mut acc;
                axpy_tile(c0, rows[0][p], bv);
                axpy_tile(c1, rows[1][p], bv);
                axpy_tile(c2, rows[2][p], bv);
                axpy_tile(c3, rows[3][p], bv);
            }
            for (r, tile) in acc.iter().enumerate() {
                c[(i + r) * n + j..][..NR].copy_from_slice(tile);
            }
        }
    }
    let edge = |c: &mut [T], i: usize, j0: usize, j1: usize| {
        for p in 0..kk {
            let av = a[i * kk + p];
            for (x, &y) in c[i * n + j0..i * n + j1].iter_mut().zip(&b[p * n + j0..p * n + j1]) {
                *x = *x + av * y;
            }
        }
    };
    for i in 0..full_m {
        if full_n < n {
            edge(c, i, full_n, n);
        }
    }
    for i in full_m..m {
        edge(c, i, 0, n);
    }
}

fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// 2-D cross-correlation of a `C_in×H×W` input with `C_out×C_in×k×k` weights.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = conv_geometry(input, weights, stride, padding)?;
    if bias.len() != g.c_out {
        return Err(dim_err!(
            "conv bias has {} entries, expected {}",
            bias.len(),
            g.c_out
        ));
    }
    let n = g.oh * g.ow;
    let kk = g.c_in * g.k * g.k;
    let col = im2col(input.data(), &g, stride, padding);
    let mut out = vec![T::zero(); g.c_out * n];
    for (plane, &b) in out.chunks_exact_mut(n).zip(bias.data()) {
        plane.fill(b);
    }
    gemm_acc(weights.data(), &col, &mut out, g.c_out, kk, n);
    Tensor::new(vec![g.c_out, g.oh, g.ow], out)
}

/// Gradients of a convolution with respect to its input, weights and bias.
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: usize,
    grad_output: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = conv_geometry(input, weights, stride, padding)?;
    if grad_output.shape() != [g.c_out, g.oh, g.ow] {
        return Err(dim_err!(
            "conv output gradient has shape {:?}, expected {:?}",
            grad_output.shape(),
            [g.c_out, g.oh, g.ow]
        ));
    }
    let n = g.oh * g.ow;
    let kk = g.c_in * g.k * g.k;
    let col = im2col(input.data(), &g, stride, padding);
    let go = grad_output.data();
    let gb = go.chunks_exact(n).map(|p| p.iter().copied().sum()).collect();
    // dW = dY · colᵀ, dcol = Wᵀ · dY
    let mut gw = vec![T::zero(); g.c_out * kk];
    gemm_acc(go, &transpose(&col, kk, n), &mut gw, g.c_out, n, kk);
    let mut gcol = vec![T::zero(); kk * n];
    gemm_acc(&transpose(weights.data(), g.c_out, kk), go, &mut gcol, kk, g.c_out, n);
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), col2im(&gcol, &g, stride, padding))?,
        weights: Tensor::new(weights.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![g.c_out], gb)?,
    })
}

/// Non-overlapping 2×2 max pooling. Returns the pooled tensor and, for every
/// output element, the flat input index that won (first row-major maximum).
pub fn maxpool2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (c, h, w) = input.dims3()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(dim_err!("maxpool2 needs even spatial extents, got {h}×{w}"));
    }
    let (oh, ow) = (h / 2, w / 2);
    let d = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let top = (ch * h + 2 * oy) * w + 2 * ox;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if d[idx] > d[best] {
                        best = idx;
                    }
                }
                out.push(d[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], out)?, argmax))
}

/// Scatters output gradients back onto the argmax positions.
pub fn maxpool2_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_output: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != grad_output.len() {
        return Err(dim_err!(
            "maxpool2 gradient has {} entries for {} pooled outputs",
            grad_output.len(),
            argmax.len()
        ));
    }
    let mut gin = Tensor::zeros(input_shape);
    let gd = gin.data_mut();
    for (&idx, &gv) in argmax.iter().zip(grad_output.data()) {
        gd[idx] = gd[idx] + gv;
    }
    Ok(gin)
}

/// `weights · input + bias` with `weights` of shape `m×n`. The input may have
/// any shape with `n` elements (it is read flat).
pub fn dense<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let [m, n] = weights.shape()[..] else {
        return Err(dim_err!("dense weights must be m×n, got {:?}", weights.shape()));
    };
    if input.len() != n {
        return Err(dim_err!("dense input has {} elements, weights expect {n}", input.len()));
    }
    if bias.len() != m {
        return Err(dim_err!("dense bias has {} entries, expected {m}", bias.len()));
    }
    let x = input.data();
    let out = weights
        .data()
        .chunks_exact(n)
        .zip(bias.data())
        .map(|(row, &b)| row.iter().zip(x).fold(b, |a, (&w, &v)| a + w * v))
        .collect();
    Tensor::new(vec![m], out)
}

pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_output: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let [m, n] = weights.shape()[..] else {
        return Err(dim_err!("dense weights must be m×n, got {:?}", weights.shape()));
    };
    if input.len() != n || grad_output.len() != m {
        return Err(dim_err!(
            "dense backward shapes disagree: input {}, grad {}, weights {m}×{n}",
            input.len(),
            grad_output.len()
        ));
    }
    let x = input.data();
    let g = grad_output.data();
    let mut gx = vec![T::zero(); n];
    let mut gw = Vec::with_capacity(m * n);
    for (row, &gv) in weights.data().chunks_exact(n).zip(g) {
        for (d, &w) in gx.iter_mut().zip(row) {
            *d = *d + w * gv;
        }
        gw.extend(x.iter().map(|&v| gv * v));
    }
    Ok(DenseGrads {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        weights: Tensor::new(vec![m, n], gw)?,
        bias: Tensor::new(vec![m], g.to_vec())?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// Logistic function, clamped so the result stays strictly inside (0, 1).
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    let one = T::one();
    if x.is_nan() {
        return x;
    }
    let v = if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    };
    v.max(T::min_positive_value())
        .min(one - T::epsilon() / s(2.0))
}

impl Activation {
    pub fn apply_scalar<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    pub fn forward<T: Scalar>(self, input: &Tensor<T>) -> Tensor<T> {
        input.map(|x| self.apply_scalar(x))
    }

    /// Adjoint expressed through the forward output.
    pub fn backward<T: Scalar>(self, output: &Tensor<T>, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        if output.shape() != grad_output.shape() {
            return Err(dim_err!(
                "activation gradient shape {:?} differs from output {:?}",
                grad_output.shape(),
                output.shape()
            ));
        }
        let data = output
            .data()
            .iter()
            .zip(grad_output.data())
            .map(|(&y, &g)| match self {
                Activation::Relu => {
                    if y > T::zero() {
                        g
                    } else {
                        T::zero()
                    }
                }
                Activation::Sigmoid => g * y * (T::one() - y),
            })
            .collect();
        Tensor::new(output.shape().to_vec(), data)
    }
}

/// Per-element multipliers applied by a dropout pass (0 or `1/(1-rate)`).
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask<T>(Option<Vec<T>>);

impl<T: Scalar> DropoutMask<T> {
    pub fn identity() -> Self {
        Self(None)
    }

    pub fn kept(&self) -> Option<usize> {
        self.0
            .as_ref()
            .map(|m| m.iter().filter(|&&v| v != T::zero()).count())
    }

    pub fn backward(&self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.0 {
            None => Ok(grad_output.clone()),
            Some(mask) if mask.len() == grad_output.len() => {
                let data = grad_output.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                Tensor::new(grad_output.shape().to_vec(), data)
            }
            Some(mask) => Err(dim_err!(
                "dropout mask has {} entries, gradient has {}",
                mask.len(),
                grad_output.len()
            )),
        }
    }
}

/// Inverted dropout. Inference mode and `rate == 0` are the identity and
/// draw nothing from `rng`.
pub fn dropout<T: Scalar>(
    input: &Tensor<T>,
    rate: f64,
    rng: &mut Rng,
    training: bool,
) -> Result<(Tensor<T>, DropoutMask<T>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(param_err!("dropout rate must lie in [0, 1), got {rate}"));
    }
    if !training || rate == 0.0 {
        return Ok((input.clone(), DropoutMask::identity()));
    }
    let keep_scale: T = s(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..input.len())
        .map(|_| {
            if rng.gen::<f64>() < rate {
                T::zero()
            } else {
                keep_scale
            }
        })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Ok((
        Tensor::new(input.shape().to_vec(), data)?,
        DropoutMask(Some(mask)),
    ))
}

/// Mean over each channel plane: `C×H×W → C`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = input.dims3()?;
    let scale: T = s(1.0 / (h * w) as f64);
    let out = input
        .data()
        .chunks_exact(h * w)
        .map(|plane| plane.iter().copied().sum::<T>() * scale)
        .collect();
    Tensor::new(vec![c], out)
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: &[usize], grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    let [c, h, w] = input_shape[..] else {
        return Err(dim_err!("expected C×H×W input shape, got {input_shape:?}"));
    };
    if grad_output.len() != c {
        return Err(dim_err!("pool gradient has {} entries, expected {c}", grad_output.len()));
    }
    let scale: T = s(1.0 / (h * w) as f64);
    let mut out = Vec::with_capacity(c * h * w);
    for &g in grad_output.data() {
        out.extend(std::iter::repeat(g * scale).take(h * w));
    }
    Tensor::new(input_shape.to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Direct quadruple loop with explicit bounds checks for padding.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (ci, h, wd) = x.dims3().unwrap();
        let (co, k) = (w.shape()[0], w.shape()[2]);
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(&[co, oh, ow]);
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[o];
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += w.data()[((o * ci + c) * k + ky) * k + kx]
                                    * x.data()[(c * h + iy as usize) * wd + ix as usize];
                            }
                        }
                    }
                    out.data_mut()[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_zero_input_gives_bias() {
        let mut rng = seeded(1);
        let x = Tensor::<f64>::zeros(&[1, 3, 3]);
        let w = random(&[2, 1, 3, 3], &mut rng);
        let b = Tensor::vector(vec![0.25, -1.5]);
        let y = conv2d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.shape(), &[2, 1, 1]);
        assert_eq!(y.data(), &[0.25, -1.5]);
        let y = conv2d(&x, &w, &b, 1, 1).unwrap();
        assert!(y.data()[..9].iter().all(|&v| v == 0.25));
        assert!(y.data()[9..].iter().all(|&v| v == -1.5));
    }

    #[test]
    fn conv_same_padding_keeps_extent() {
        let x = Tensor::<f64>::zeros(&[1, 5, 5]);
        let w = Tensor::zeros(&[1, 1, 3, 3]);
        let y = conv2d(&x, &w, &Tensor::zeros(&[1]), 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 5, 5]);
    }

    #[test]
    fn conv_matches_loop_oracle() {
        let mut rng = seeded(7);
        let x = random(&[2, 8, 8], &mut rng);
        let w = random(&[4, 2, 3, 3], &mut rng);
        let b = random(&[4], &mut rng);
        let y = conv2d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.shape(), &[4, 6, 6]);
        assert!(y.max_abs_diff(&naive_conv(&x, &w, &b, 1, 0)) < 1e-12);
        for (stride, pad) in [(2, 1), (3, 2), (1, 1)] {
            let y = conv2d(&x, &w, &b, stride, pad).unwrap();
            assert!(y.max_abs_diff(&naive_conv(&x, &w, &b, stride, pad)) < 1e-12);
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::<f64>::zeros(&[3, 4, 4]);
        let w = Tensor::zeros(&[2, 2, 3, 3]);
        assert!(matches!(
            conv2d(&x, &w, &Tensor::zeros(&[2]), 1, 0),
            Err(crate::Error::Dimension(_))
        ));
        let w = Tensor::zeros(&[2, 3, 5, 5]);
        assert!(conv2d(&x, &w, &Tensor::zeros(&[2]), 1, 0).is_err());
    }

    #[test]
    fn maxpool_examples() {
        let x = Tensor::<f64>::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
        let c = Tensor::<f64>::full(&[2, 4, 4], 0.7);
        let (y, arg) = maxpool2(&c).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.7));
        // ties route to the first row-major element
        assert_eq!(arg[0], 0);
        assert!(maxpool2(&Tensor::<f64>::zeros(&[1, 3, 4])).is_err());
    }

    #[test]
    fn maxpool_matches_window_oracle() {
        let mut rng = seeded(3);
        let x = random(&[3, 16, 16], &mut rng);
        let (y, _) = maxpool2(&x).unwrap();
        for c in 0..3 {
            for oy in 0..8 {
                for ox in 0..8 {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(x.data()[(c * 16 + 2 * oy + dy) * 16 + 2 * ox + dx]);
                        }
                    }
                    assert_eq!(y.data()[(c * 8 + oy) * 8 + ox], m);
                }
            }
        }
    }

    #[test]
    fn dense_examples() {
        let mut rng = seeded(5);
        let x = random(&[4], &mut rng);
        let eye = Tensor::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[4])).unwrap().data(), x.data());
        let b = random(&[3], &mut rng);
        let w = random(&[3, 4], &mut rng);
        assert_eq!(dense(&Tensor::zeros(&[4]), &w, &b).unwrap().data(), b.data());

        let x = random(&[7], &mut rng);
        let w = random(&[4, 7], &mut rng);
        let b = random(&[4], &mut rng);
        let y = dense(&x, &w, &b).unwrap();
        for i in 0..4 {
            let mut acc = b.data()[i];
            for j in 0..7 {
                acc += w.data()[i * 7 + j] * x.data()[j];
            }
            assert!((y.data()[i] - acc).abs() < 1e-12);
        }
        assert!(dense(&random(&[6], &mut rng), &w, &b).is_err());
    }

    #[test]
    fn activation_examples() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert_eq!(Activation::Relu.apply_scalar(-3.0f64), 0.0);
        assert_eq!(Activation::Relu.apply_scalar(3.0f64), 3.0);
        let mut rng = seeded(11);
        for _ in 0..1000 {
            let x: f64 = rng.gen_range(-30.0..30.0);
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-12);
        }
        for x in [-1e6f64, -800.0, -40.0, 40.0, 800.0, 1e6] {
            let v = sigmoid(x);
            assert!(v > 0.0 && v < 1.0, "sigmoid({x}) = {v}");
            let v = sigmoid(x as f32);
            assert!(v > 0.0 && v < 1.0, "sigmoid({x}) = {v}");
        }
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = seeded(2);
        let x = random(&[50], &mut rng);
        let (y, _) = dropout(&x, 0.0, &mut rng, true).unwrap();
        assert_eq!(y, x);
        let (y, _) = dropout(&x, 0.7, &mut rng, false).unwrap();
        assert_eq!(y, x);
        assert!(matches!(dropout(&x, 1.0, &mut rng, true), Err(crate::Error::Parameter(_))));
    }

    #[test]
    fn dropout_monte_carlo_expectation() {
        let mut rng = seeded(42);
        let x = Tensor::<f64>::from_fn(&[10_000], |_| rng.gen_range(0.5..1.5));
        let (y, mask) = dropout(&x, 0.5, &mut rng, true).unwrap();
        let kept = mask.kept().unwrap() as f64 / 10_000.0;
        assert!((kept - 0.5).abs() <= 0.02, "kept fraction {kept}");
        let rel = (y.mean() - x.mean()).abs() / x.mean();
        assert!(rel < 0.03, "mean drift {rel}");
    }

    #[test]
    fn maxpool_backward_conserves_mass() {
        let mut rng = seeded(9);
        for _ in 0..20 {
            let x = random(&[2, 6, 8], &mut rng);
            let (y, arg) = maxpool2(&x).unwrap();
            let g = random(y.shape(), &mut rng);
            let gin = maxpool2_backward(x.shape(), &arg, &g).unwrap();
            assert!((gin.sum() - g.sum()).abs() < 1e-12);
        }
    }

    #[test]
    fn gap_roundtrip_shapes() {
        let x = Tensor::<f64>::from_fn(&[2, 2, 2], |i| i as f64);
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.data(), &[1.5, 5.5]);
        let g = global_avg_pool_backward(x.shape(), &Tensor::vector(vec![4.0, 8.0])).unwrap();
        assert_eq!(g.data(), &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
    }
}
