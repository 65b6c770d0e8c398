//! Head of the network: temporal max pooling, strip-wise generalized-mean
//! pooling, and per-strip (separable) fully connected maps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::scalar::Scalar;
use crate::tensor::{FeatureMap, Matrix};

/// Affine map `in_dim → out_dim`; `weight` is `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { in_dim, out_dim, weight: vec![T::zero(); in_dim * out_dim], bias: vec![T::zero(); out_dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut l = Self::zeros(dim, dim);
        for i in 0..dim {
            l.weight[i * dim + i] = T::one();
        }
        l
    }

    /// `U(-1/sqrt(in), 1/sqrt(in))` weights, zero bias.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self {
            in_dim,
            out_dim,
            weight: (0..in_dim * out_dim).map(|_| T::lit(rng.gen_range(-bound..=bound))).collect(),
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn apply(&self, input: &[T], out: &mut [T]) {
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            *slot = row.iter().zip(input).map(|(&a, &b)| a * b).sum::<T>() + self.bias[o];
        }
    }

    /// Accumulates weight/bias gradients; adds the input gradient into `gin`.
    fn backward(&self, input: &[T], gout: &[T], grad: &mut Self, gin: &mut [T]) {
        for (o, &g) in gout.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            grad.bias[o] += g;
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * input[i];
                gin[i] += g * row[i];
            }
        }
    }
}

/// GeM exponent plus per-strip embedding and classifier maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams<T> {
    pub gem_delta: T,
    pub sefc_weights: Vec<Linear<T>>,
    pub classifier_weights: Vec<Linear<T>>,
}

impl<T: Scalar> HeadParams<T> {
    pub fn num_strips(&self) -> usize {
        self.sefc_weights.len()
    }
}

/// Output of [`temporal_pool`]: a single-frame map and the frame that won each element.
#[derive(Debug, Clone)]
pub struct TemporalPool<T> {
    pub pooled: FeatureMap<T>,
    pub argmax: Vec<u32>,
}

/// Element-wise maximum over the frame axis.
pub fn temporal_pool<T: Scalar>(x: &FeatureMap<T>) -> TemporalPool<T> {
    let (c, d, hw) = (x.channels(), x.frames(), x.frame_len());
    let mut pooled = FeatureMap::zeros(c, 1, x.height(), x.width());
    let mut argmax = vec![0u32; c * hw];
    let xs = x.as_slice();
    for ch in 0..c {
        let out = &mut pooled.as_mut_slice()[ch * hw..(ch + 1) * hw];
        let arg = &mut argmax[ch * hw..(ch + 1) * hw];
        out.copy_from_slice(&xs[ch * d * hw..ch * d * hw + hw]);
        for t in 1..d {
            let frame = &xs[(ch * d + t) * hw..(ch * d + t + 1) * hw];
            for i in 0..hw {
                if frame[i] > out[i] {
                    out[i] = frame[i];
                    arg[i] = t as u32;
                }
            }
        }
    }
    TemporalPool { pooled, argmax }
}

pub(crate) fn temporal_pool_backward<T: Scalar>(
    input_shape: [usize; 4],
    argmax: &[u32],
    g: &FeatureMap<T>,
) -> FeatureMap<T> {
    let [c, d, h, w] = input_shape;
    let hw = h * w;
    let mut gx = FeatureMap::zeros(c, d, h, w);
    let gs = g.as_slice();
    let gxs = gx.as_mut_slice();
    for ch in 0..c {
        for i in 0..hw {
            let t = argmax[ch * hw + i] as usize;
            gxs[(ch * d + t) * hw + i] += gs[ch * hw + i];
        }
    }
    gx
}

/// Power mean `(mean(max(v, eps)^delta))^(1/delta)` of each channel over
/// `num_strips` horizontal bands. Input is a single-frame map; output is `strips × channels`.
pub fn gem_pool<T: Scalar>(x: &FeatureMap<T>, delta: T, num_strips: usize, eps: T) -> Result<Matrix<T>> {
    if !(delta > T::zero()) || !delta.is_finite() {
        return Err(GaitError::Parameter(format!("GeM exponent must be finite and positive, got {delta}")));
    }
    if num_strips == 0 || x.height() % num_strips != 0 {
        return Err(GaitError::Shape(format!("height {} is not divisible by num_strips {num_strips}", x.height())));
    }
    if x.frames() != 1 {
        return Err(GaitError::Shape(format!("GeM expects a temporally pooled map, got {} frames", x.frames())));
    }
    let band = x.height() / num_strips * x.width();
    let mut out = Matrix::zeros(num_strips, x.channels());
    for c in 0..x.channels() {
        let chan = &x.as_slice()[c * x.frame_len()..(c + 1) * x.frame_len()];
        for s in 0..num_strips {
            out.set(s, c, power_mean(&chan[s * band..(s + 1) * band], delta, eps));
        }
    }
    Ok(out)
}

/// Scale-stabilised power mean: `m · mean((v/m)^δ)^(1/δ)` with `m` the band max.
fn power_mean<T: Scalar>(values: &[T], delta: T, eps: T) -> T {
    let m = values.iter().fold(eps, |acc, &v| acc.max(v));
    let n = T::from_usize_lossy(values.len());
    let s: T = values.iter().map(|&v| (v.max(eps) / m).powf(delta)).sum();
    m * (s / n).powf(delta.recip())
}

/// Gradient of one band's power mean. Adds `dL/dv` into `gband` and returns `dL/dδ`.
fn power_mean_backward<T: Scalar>(values: &[T], delta: T, eps: T, out: T, g: T, gband: &mut [T]) -> T {
    let n = T::from_usize_lossy(values.len());
    let ln_out = out.ln();
    let mut wsum = T::zero();
    let mut wlog = T::zero();
    for (i, &v) in values.iter().enumerate() {
        let vc = v.max(eps);
        let ratio = vc / out;
        // d out / d v_i = (v_i / out)^(δ-1) / n
        if v > eps {
            gband[i] += g * ratio.powf(delta - T::one()) / n;
        }
        let wi = ratio.powf(delta);
        wsum += wi;
        wlog += wi * vc.ln();
    }
    // d out / dδ = out/δ · (Σ w_i ln v_i / Σ w_i − ln out)
    g * out / delta * (wlog / wsum - ln_out)
}

pub(crate) fn gem_backward<T: Scalar>(
    x: &FeatureMap<T>,
    delta: T,
    num_strips: usize,
    eps: T,
    out: &Matrix<T>,
    gout: &Matrix<T>,
) -> (FeatureMap<T>, T) {
    let band = x.height() / num_strips * x.width();
    let mut gx = FeatureMap::zeros(x.channels(), 1, x.height(), x.width());
    let mut gdelta = T::zero();
    let fl = x.frame_len();
    for c in 0..x.channels() {
        let chan = &x.as_slice()[c * fl..(c + 1) * fl];
        let gchan = &mut gx.as_mut_slice()[c * fl..(c + 1) * fl];
        for s in 0..num_strips {
            let g = gout.get(s, c);
            if g == T::zero() {
                continue;
            }
            gdelta += power_mean_backward(
                &chan[s * band..(s + 1) * band],
                delta,
                eps,
                out.get(s, c),
                g,
                &mut gchan[s * band..(s + 1) * band],
            );
        }
    }
    (gx, gdelta)
}

fn per_strip<T: Scalar>(strips: &Matrix<T>, maps: &[Linear<T>], what: &str) -> Result<Matrix<T>> {
    if strips.rows() != maps.len() {
        return Err(GaitError::Config(format!("{what}: {} strips but {} strip maps", strips.rows(), maps.len())));
    }
    let out_dim = maps.first().map_or(0, |m| m.out_dim);
    let mut out = Matrix::zeros(strips.rows(), out_dim);
    for (s, map) in maps.iter().enumerate() {
        if map.in_dim != strips.cols() || map.out_dim != out_dim {
            return Err(GaitError::Config(format!(
                "{what}: strip {s} map is {}→{}, input has {} features",
                map.in_dim,
                map.out_dim,
                strips.cols()
            )));
        }
        map.apply(strips.row(s), out.row_mut(s));
    }
    Ok(out)
}

fn per_strip_backward<T: Scalar>(strips: &Matrix<T>, maps: &[Linear<T>], gout: &Matrix<T>, grads: &mut [Linear<T>]) -> Matrix<T> {
    let mut gin = Matrix::zeros(strips.rows(), strips.cols());
    for (s, (map, gmap)) in maps.iter().zip(grads.iter_mut()).enumerate() {
        map.backward(strips.row(s), gout.row(s), gmap, gin.row_mut(s));
    }
    gin
}

/// Separable fully connected layer: strip `s` goes through its own map only.
pub fn sefc_forward<T: Scalar>(strips: &Matrix<T>, hp: &HeadParams<T>) -> Result<Matrix<T>> {
    per_strip(strips, &hp.sefc_weights, "SeFC")
}

/// Per-strip classifier logits from per-strip embeddings.
pub fn classifier_forward<T: Scalar>(embedding: &Matrix<T>, hp: &HeadParams<T>) -> Result<Matrix<T>> {
    per_strip(embedding, &hp.classifier_weights, "classifier")
}

pub(crate) fn sefc_backward<T: Scalar>(strips: &Matrix<T>, hp: &HeadParams<T>, gout: &Matrix<T>, grads: &mut HeadParams<T>) -> Matrix<T> {
    per_strip_backward(strips, &hp.sefc_weights, gout, &mut grads.sefc_weights)
}

pub(crate) fn classifier_backward<T: Scalar>(
    embedding: &Matrix<T>,
    hp: &HeadParams<T>,
    gout: &Matrix<T>,
    grads: &mut HeadParams<T>,
) -> Matrix<T> {
    per_strip_backward(embedding, &hp.classifier_weights, gout, &mut grads.classifier_weights)
}
