//! 3×3×3 convolutions with padding 1 and stride 1.
//!
//! Every routine works on a horizontal band `[row0, row0 + rows)` of the
//! input and treats everything outside the band as zero padding. The
//! full-body extractor uses the whole height as its band; the part extractor
//! runs one band per slab so slabs never exchange information.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::scalar::{gemm, MatLayout, Scalar};
use crate::tensor::FeatureMap;

/// Kernel taps per (out, in) pair: 3 frames × 3 rows × 3 columns.
pub const KERNEL_VOLUME: usize = 27;

/// Dense 3×3×3 convolution weights. `kernel` is laid out `[out][in][kt][kh][kw]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv3dWeights<T> {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

/// Depthwise 3×3×3 kernel per input channel followed by a 1×1×1 pointwise
/// mix. Bias lives on the pointwise stage only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthwiseSeparable3dWeights<T> {
    pub out_channels: usize,
    pub in_channels: usize,
    /// `[in][kt][kh][kw]`
    pub depthwise: Vec<T>,
    /// `[out][in]`
    pub pointwise: Vec<T>,
    pub bias: Vec<T>,
}

fn uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R, n: usize, bound: f64) -> Vec<T> {
    (0..n).map(|_| T::lit(rng.gen_range(-bound..=bound))).collect()
}

impl<T: Scalar> Conv3dWeights<T> {
    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            kernel: vec![T::zero(); out_channels * in_channels * KERNEL_VOLUME],
            bias: vec![T::zero(); out_channels],
        }
    }

    /// Fan-in scaled uniform init: `U(-b, b)` with `b = sqrt(3 / fan_in)`, zero bias.
    pub fn init<R: Rng + ?Sized>(out_channels: usize, in_channels: usize, rng: &mut R) -> Self {
        let bound = (3.0 / (in_channels * KERNEL_VOLUME) as f64).sqrt();
        Self {
            out_channels,
            in_channels,
            kernel: uniform(rng, out_channels * in_channels * KERNEL_VOLUME, bound),
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn num_params(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    pub fn closed_form_params(out_channels: usize, in_channels: usize) -> usize {
        out_channels * in_channels * KERNEL_VOLUME + out_channels
    }

    #[inline]
    pub fn tap(&self, o: usize, i: usize, kt: usize, kh: usize, kw: usize) -> T {
        self.kernel[(((o * self.in_channels + i) * 3 + kt) * 3 + kh) * 3 + kw]
    }

    fn check_input(&self, x: &FeatureMap<T>) -> Result<()> {
        if x.channels() != self.in_channels {
            return Err(GaitError::Config(format!(
                "convolution expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        Ok(())
    }

    /// Convolves rows `[row0, row0 + rows)` of `x` into the same rows of `out`.
    /// With `accumulate` the result is added to what `out` already holds.
    pub fn forward_band(&self, x: &FeatureMap<T>, row0: usize, rows: usize, out: &mut FeatureMap<T>, accumulate: bool) -> Result<()> {
        self.check_input(x)?;
        check_out(out, self.out_channels, x)?;
        let n = rows * x.width();
        let kdim = self.in_channels * KERNEL_VOLUME;
        let mut cols = vec![T::zero(); kdim * n];
        let chan_stride = out.channel_len();
        let beta = if accumulate { T::one() } else { T::zero() };
        for t in 0..x.frames() {
            im2col_band(x, t, row0, rows, &mut cols);
            let offset = out.index(0, t, row0, 0);
            gemm(
                self.out_channels,
                kdim,
                n,
                T::one(),
                &self.kernel,
                MatLayout::row_major(0, kdim),
                &cols,
                MatLayout::row_major(0, n),
                beta,
                out.as_mut_slice(),
                MatLayout { offset, row_stride: chan_stride, col_stride: 1 },
            );
        }
        add_bias_band(out, &self.bias, row0, rows);
        Ok(())
    }

    /// Accumulates kernel/bias gradients into `grad` and, when given, the
    /// input gradient into `gx` for the band.
    pub fn backward_band(
        &self,
        x: &FeatureMap<T>,
        row0: usize,
        rows: usize,
        gy: &FeatureMap<T>,
        grad: &mut Self,
        mut gx: Option<&mut FeatureMap<T>>,
    ) {
        let n = rows * x.width();
        let kdim = self.in_channels * KERNEL_VOLUME;
        let mut cols = vec![T::zero(); kdim * n];
        let mut gcols = vec![T::zero(); kdim * n];
        let chan_stride = gy.channel_len();
        for t in 0..x.frames() {
            let offset = gy.index(0, t, row0, 0);
            let gy_layout = MatLayout { offset, row_stride: chan_stride, col_stride: 1 };
            im2col_band(x, t, row0, rows, &mut cols);
            // dK (out×kdim) += gY_t (out×n) · cols^T (n×kdim)
            gemm(
                self.out_channels,
                n,
                kdim,
                T::one(),
                gy.as_slice(),
                gy_layout,
                &cols,
                MatLayout::row_major(0, n).transposed(),
                T::one(),
                &mut grad.kernel,
                MatLayout::row_major(0, kdim),
            );
            if let Some(gx) = gx.as_deref_mut() {
                // dcols (kdim×n) = K^T (kdim×out) · gY_t (out×n)
                gemm(
                    kdim,
                    self.out_channels,
                    n,
                    T::one(),
                    &self.kernel,
                    MatLayout::row_major(0, kdim).transposed(),
                    gy.as_slice(),
                    gy_layout,
                    T::zero(),
                    &mut gcols,
                    MatLayout::row_major(0, n),
                );
                col2im_band(&gcols, t, row0, rows, gx);
            }
        }
        accumulate_bias_grad(gy, &mut grad.bias, row0, rows);
    }
}

impl<T: Scalar> DepthwiseSeparable3dWeights<T> {
    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            depthwise: vec![T::zero(); in_channels * KERNEL_VOLUME],
            pointwise: vec![T::zero(); out_channels * in_channels],
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn init<R: Rng + ?Sized>(out_channels: usize, in_channels: usize, rng: &mut R) -> Self {
        let dw_bound = (3.0 / KERNEL_VOLUME as f64).sqrt();
        let pw_bound = (3.0 / in_channels as f64).sqrt();
        Self {
            out_channels,
            in_channels,
            depthwise: uniform(rng, in_channels * KERNEL_VOLUME, dw_bound),
            pointwise: uniform(rng, out_channels * in_channels, pw_bound),
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn num_params(&self) -> usize {
        self.depthwise.len() + self.pointwise.len() + self.bias.len()
    }

    pub fn closed_form_params(out_channels: usize, in_channels: usize) -> usize {
        in_channels * KERNEL_VOLUME + in_channels * out_channels + out_channels
    }

    /// Per-channel 3×3×3 convolution of the band; returns a `in × D × rows × W` map.
    pub fn depthwise_band(&self, x: &FeatureMap<T>, row0: usize, rows: usize) -> FeatureMap<T> {
        let (d, w) = (x.frames(), x.width());
        let mut z = FeatureMap::zeros(self.in_channels, d, rows, w);
        for c in 0..self.in_channels {
            let k = &self.depthwise[c * KERNEL_VOLUME..(c + 1) * KERNEL_VOLUME];
            for t in 0..d {
                for kt in 0..3 {
                    let Some(ts) = shifted(t, kt, d) else { continue };
                    for h in 0..rows {
                        let zrow = z.index(c, t, h, 0);
                        for kh in 0..3 {
                            let Some(hs) = shifted(h, kh, rows) else { continue };
                            let src = x.index(c, ts, row0 + hs, 0);
                            for kw in 0..3 {
                                let tap = k[(kt * 3 + kh) * 3 + kw];
                                let (xs, zs) = (x.as_slice(), z.as_mut_slice());
                                shifted_axpy(tap, &xs[src..src + w], &mut zs[zrow..zrow + w], kw);
                            }
                        }
                    }
                }
            }
        }
        z
    }

    pub fn forward_band(&self, x: &FeatureMap<T>, row0: usize, rows: usize, out: &mut FeatureMap<T>, accumulate: bool) -> Result<()> {
        if x.channels() != self.in_channels {
            return Err(GaitError::Config(format!(
                "depthwise-separable convolution expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        check_out(out, self.out_channels, x)?;
        let z = self.depthwise_band(x, row0, rows);
        let n = rows * x.width();
        let beta = if accumulate { T::one() } else { T::zero() };
        let out_stride = out.channel_len();
        for t in 0..x.frames() {
            let offset = out.index(0, t, row0, 0);
            gemm(
                self.out_channels,
                self.in_channels,
                n,
                T::one(),
                &self.pointwise,
                MatLayout::row_major(0, self.in_channels),
                z.as_slice(),
                MatLayout { offset: z.index(0, t, 0, 0), row_stride: z.channel_len(), col_stride: 1 },
                beta,
                out.as_mut_slice(),
                MatLayout { offset, row_stride: out_stride, col_stride: 1 },
            );
        }
        add_bias_band(out, &self.bias, row0, rows);
        Ok(())
    }

    pub fn backward_band(
        &self,
        x: &FeatureMap<T>,
        row0: usize,
        rows: usize,
        gy: &FeatureMap<T>,
        grad: &mut Self,
        gx: Option<&mut FeatureMap<T>>,
    ) {
        let (d, w) = (x.frames(), x.width());
        let n = rows * w;
        let z = self.depthwise_band(x, row0, rows);
        let mut gz = FeatureMap::zeros(self.in_channels, d, rows, w);
        let gy_stride = gy.channel_len();
        for t in 0..d {
            let gy_layout = MatLayout { offset: gy.index(0, t, row0, 0), row_stride: gy_stride, col_stride: 1 };
            let z_layout = MatLayout { offset: z.index(0, t, 0, 0), row_stride: z.channel_len(), col_stride: 1 };
            // dP (out×in) += gY_t (out×n) · Z_t^T (n×in)
            gemm(
                self.out_channels,
                n,
                self.in_channels,
                T::one(),
                gy.as_slice(),
                gy_layout,
                z.as_slice(),
                z_layout.transposed(),
                T::one(),
                &mut grad.pointwise,
                MatLayout::row_major(0, self.in_channels),
            );
            // dZ_t (in×n) = P^T (in×out) · gY_t (out×n)
            let gz_stride = gz.channel_len();
            let gz_off = gz.index(0, t, 0, 0);
            gemm(
                self.in_channels,
                self.out_channels,
                n,
                T::one(),
                &self.pointwise,
                MatLayout::row_major(0, self.in_channels).transposed(),
                gy.as_slice(),
                gy_layout,
                T::zero(),
                gz.as_mut_slice(),
                MatLayout { offset: gz_off, row_stride: gz_stride, col_stride: 1 },
            );
        }
        accumulate_bias_grad(gy, &mut grad.bias, row0, rows);

        let mut gx = gx;
        for c in 0..self.in_channels {
            let kbase = c * KERNEL_VOLUME;
            for t in 0..d {
                for kt in 0..3 {
                    let Some(ts) = shifted(t, kt, d) else { continue };
                    for h in 0..rows {
                        let gzrow = gz.index(c, t, h, 0);
                        for kh in 0..3 {
                            let Some(hs) = shifted(h, kh, rows) else { continue };
                            let src = x.index(c, ts, row0 + hs, 0);
                            let xs = &x.as_slice()[src..src + w];
                            let gzs = &gz.as_slice()[gzrow..gzrow + w];
                            for kw in 0..3 {
                                let tap_idx = kbase + (kt * 3 + kh) * 3 + kw;
                                grad.depthwise[tap_idx] += shifted_dot(gzs, xs, kw);
                                if let Some(gx) = gx.as_deref_mut() {
                                    let tap = self.depthwise[tap_idx];
                                    let gxs = &mut gx.as_mut_slice()[src..src + w];
                                    shifted_axpy_transposed(tap, gzs, gxs, kw);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_out<T: Scalar>(out: &FeatureMap<T>, out_channels: usize, x: &FeatureMap<T>) -> Result<()> {
    let want = [out_channels, x.frames(), x.height(), x.width()];
    if out.shape() != want {
        return Err(GaitError::Shape(format!("convolution output buffer {:?} does not match {:?}", out.shape(), want)));
    }
    Ok(())
}

/// Source index for output position `i` and kernel offset `k ∈ {0,1,2}` under padding 1.
#[inline]
fn shifted(i: usize, k: usize, len: usize) -> Option<usize> {
    let s = i + k;
    if s == 0 || s > len {
        None
    } else {
        Some(s - 1)
    }
}

/// `dst[w] += a * src[w + kw - 1]` with zero padding at both ends.
#[inline]
fn shifted_axpy<T: Scalar>(a: T, src: &[T], dst: &mut [T], kw: usize) {
    let w = dst.len();
    match kw {
        0 => {
            for i in 1..w {
                dst[i] += a * src[i - 1];
            }
        }
        1 => {
            for i in 0..w {
                dst[i] += a * src[i];
            }
        }
        _ => {
            for i in 0..w - 1 {
                dst[i] += a * src[i + 1];
            }
        }
    }
}

/// Adjoint of [`shifted_axpy`]: `gsrc[w + kw - 1] += a * gdst[w]`.
#[inline]
fn shifted_axpy_transposed<T: Scalar>(a: T, gdst: &[T], gsrc: &mut [T], kw: usize) {
    let w = gdst.len();
    match kw {
        0 => {
            for i in 1..w {
                gsrc[i - 1] += a * gdst[i];
            }
        }
        1 => {
            for i in 0..w {
                gsrc[i] += a * gdst[i];
            }
        }
        _ => {
            for i in 0..w - 1 {
                gsrc[i + 1] += a * gdst[i];
            }
        }
    }
}

/// `Σ_w g[w] * src[w + kw - 1]` over in-range positions.
#[inline]
fn shifted_dot<T: Scalar>(g: &[T], src: &[T], kw: usize) -> T {
    let w = g.len();
    let mut acc = T::zero();
    match kw {
        0 => {
            for i in 1..w {
                acc += g[i] * src[i - 1];
            }
        }
        1 => {
            for i in 0..w {
                acc += g[i] * src[i];
            }
        }
        _ => {
            for i in 0..w - 1 {
                acc += g[i] * src[i + 1];
            }
        }
    }
    acc
}

/// Builds the `(in·27) × (rows·W)` patch matrix for output frame `t`.
fn im2col_band<T: Scalar>(x: &FeatureMap<T>, t: usize, row0: usize, rows: usize, cols: &mut [T]) {
    let (d, w) = (x.frames(), x.width());
    let n = rows * w;
    let xs = x.as_slice();
    for ci in 0..x.channels() {
        for kt in 0..3 {
            let ts = shifted(t, kt, d);
            for kh in 0..3 {
                for kw in 0..3 {
                    let r = ((ci * 3 + kt) * 3 + kh) * 3 + kw;
                    let dst = &mut cols[r * n..(r + 1) * n];
                    let Some(ts) = ts else {
                        dst.fill(T::zero());
                        continue;
                    };
                    for h in 0..rows {
                        let drow = &mut dst[h * w..(h + 1) * w];
                        let Some(hs) = shifted(h, kh, rows) else {
                            drow.fill(T::zero());
                            continue;
                        };
                        let s = x.index(ci, ts, row0 + hs, 0);
                        let srow = &xs[s..s + w];
                        match kw {
                            0 => {
                                drow[0] = T::zero();
                                drow[1..].copy_from_slice(&srow[..w - 1]);
                            }
                            1 => drow.copy_from_slice(srow),
                            _ => {
                                drow[..w - 1].copy_from_slice(&srow[1..]);
                                drow[w - 1] = T::zero();
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds a patch-matrix gradient back onto the band of `gx` (adjoint of [`im2col_band`]).
fn col2im_band<T: Scalar>(gcols: &[T], t: usize, row0: usize, rows: usize, gx: &mut FeatureMap<T>) {
    let (d, w) = (gx.frames(), gx.width());
    let n = rows * w;
    for ci in 0..gx.channels() {
        for kt in 0..3 {
            let Some(ts) = shifted(t, kt, d) else { continue };
            for kh in 0..3 {
                for kw in 0..3 {
                    let r = ((ci * 3 + kt) * 3 + kh) * 3 + kw;
                    let src = &gcols[r * n..(r + 1) * n];
                    for h in 0..rows {
                        let Some(hs) = shifted(h, kh, rows) else { continue };
                        let s = gx.index(ci, ts, row0 + hs, 0);
                        let grow = &mut gx.as_mut_slice()[s..s + w];
                        shifted_axpy_transposed(T::one(), &src[h * w..(h + 1) * w], grow, kw);
                    }
                }
            }
        }
    }
}

fn add_bias_band<T: Scalar>(out: &mut FeatureMap<T>, bias: &[T], row0: usize, rows: usize) {
    let w = out.width();
    for (c, &b) in bias.iter().enumerate() {
        if b == T::zero() {
            continue;
        }
        for t in 0..out.frames() {
            let s = out.index(c, t, row0, 0);
            for v in &mut out.as_mut_slice()[s..s + rows * w] {
                *v += b;
            }
        }
    }
}

fn accumulate_bias_grad<T: Scalar>(gy: &FeatureMap<T>, gbias: &mut [T], row0: usize, rows: usize) {
    let w = gy.width();
    for (c, gb) in gbias.iter_mut().enumerate() {
        for t in 0..gy.frames() {
            let s = gy.index(c, t, row0, 0);
            *gb += gy.as_slice()[s..s + rows * w].iter().copied().sum::<T>();
        }
    }
}
