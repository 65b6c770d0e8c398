//! Multi-scale motion aggregation: learnable max/mean temporal compression
//! by a factor of three, run as a body-level branch plus per-slab branches.

use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::scalar::Scalar;
use crate::tensor::FeatureMap;

/// Temporal window length (and stride) of every LMA.
pub const LMA_WINDOW: usize = 3;

/// Mixing weights of one local motion aggregation: `p1·max + p2·mean`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmaParams<T> {
    pub p1: T,
    pub p2: T,
}

impl<T: Scalar> LmaParams<T> {
    pub fn new(p1: T, p2: T) -> Self {
        Self { p1, p2 }
    }

    pub fn splat(v: T) -> Self {
        Self { p1: v, p2: v }
    }

    pub fn zero() -> Self {
        Self::splat(T::zero())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsmaParams<T> {
    pub global_lma: LmaParams<T>,
    pub part_lmas: Vec<LmaParams<T>>,
}

impl<T: Scalar> MsmaParams<T> {
    pub fn init(l_parts: usize, value: T) -> Self {
        Self { global_lma: LmaParams::splat(value), part_lmas: vec![LmaParams::splat(value); l_parts] }
    }

    pub fn l_parts(&self) -> usize {
        self.part_lmas.len()
    }

    pub fn num_params(&self) -> usize {
        2 * (1 + self.part_lmas.len())
    }
}

fn check_frames<T: Scalar>(x: &FeatureMap<T>) -> Result<()> {
    if x.frames() % LMA_WINDOW != 0 {
        return Err(GaitError::Shape(format!(
            "LMA needs a frame count divisible by {LMA_WINDOW}, got {}",
            x.frames()
        )));
    }
    Ok(())
}

/// Applies the LMA to rows `[row0, row0 + rows)`, adding into `out`.
fn lma_band<T: Scalar>(x: &FeatureMap<T>, p: &LmaParams<T>, row0: usize, rows: usize, out: &mut FeatureMap<T>) {
    let w = x.width();
    let third = T::one() / T::from_usize_lossy(LMA_WINDOW);
    let xs = x.as_slice();
    for c in 0..x.channels() {
        for t in 0..out.frames() {
            let base = [x.index(c, 3 * t, row0, 0), x.index(c, 3 * t + 1, row0, 0), x.index(c, 3 * t + 2, row0, 0)];
            let o = out.index(c, t, row0, 0);
            let os = out.as_mut_slice();
            for i in 0..rows * w {
                let (a, b, d) = (xs[base[0] + i], xs[base[1] + i], xs[base[2] + i]);
                let max = a.max(b).max(d);
                let mean = (a + b + d) * third;
                os[o + i] += p.p1 * max + p.p2 * mean;
            }
        }
    }
}

/// Backward of [`lma_band`]: accumulates `gp` and the input gradient `gx`.
fn lma_band_backward<T: Scalar>(
    x: &FeatureMap<T>,
    p: &LmaParams<T>,
    row0: usize,
    rows: usize,
    gy: &FeatureMap<T>,
    gp: &mut LmaParams<T>,
    gx: &mut FeatureMap<T>,
) {
    let w = x.width();
    let third = T::one() / T::from_usize_lossy(LMA_WINDOW);
    let xs = x.as_slice();
    let mut g1 = T::zero();
    let mut g2 = T::zero();
    for c in 0..x.channels() {
        for t in 0..gy.frames() {
            let base = [x.index(c, 3 * t, row0, 0), x.index(c, 3 * t + 1, row0, 0), x.index(c, 3 * t + 2, row0, 0)];
            let o = gy.index(c, t, row0, 0);
            for i in 0..rows * w {
                let g = gy.as_slice()[o + i];
                let v = [xs[base[0] + i], xs[base[1] + i], xs[base[2] + i]];
                // first maximum wins ties
                let mut arg = 0;
                for j in 1..LMA_WINDOW {
                    if v[j] > v[arg] {
                        arg = j;
                    }
                }
                let mean = (v[0] + v[1] + v[2]) * third;
                g1 += g * v[arg];
                g2 += g * mean;
                let gxs = gx.as_mut_slice();
                for (j, b) in base.iter().enumerate() {
                    let mut d = p.p2 * third;
                    if j == arg {
                        d += p.p1;
                    }
                    gxs[b + i] += g * d;
                }
            }
        }
    }
    gp.p1 += g1;
    gp.p2 += g2;
}

/// Non-overlapping temporal windows of three frames; output frame `t` is
/// `p1·max + p2·mean` of input frames `3t..3t+3`.
pub fn lma_forward<T: Scalar>(x: &FeatureMap<T>, p: &LmaParams<T>) -> Result<FeatureMap<T>> {
    check_frames(x)?;
    let mut out = FeatureMap::zeros(x.channels(), x.frames() / LMA_WINDOW, x.height(), x.width());
    lma_band(x, p, 0, x.height(), &mut out);
    Ok(out)
}

/// Global LMA plus `l` per-slab LMAs, fused by element-wise sum.
pub fn msma_forward<T: Scalar>(x: &FeatureMap<T>, mp: &MsmaParams<T>) -> Result<FeatureMap<T>> {
    check_frames(x)?;
    let l = mp.l_parts();
    if l == 0 || x.height() % l != 0 {
        return Err(GaitError::Shape(format!("height {} is not divisible by l_parts {l}", x.height())));
    }
    let slab = x.height() / l;
    let mut out = FeatureMap::zeros(x.channels(), x.frames() / LMA_WINDOW, x.height(), x.width());
    lma_band(x, &mp.global_lma, 0, x.height(), &mut out);
    for (j, p) in mp.part_lmas.iter().enumerate() {
        lma_band(x, p, j * slab, slab, &mut out);
    }
    Ok(out)
}

pub(crate) fn msma_backward<T: Scalar>(
    x: &FeatureMap<T>,
    gy: &FeatureMap<T>,
    mp: &MsmaParams<T>,
    grads: &mut MsmaParams<T>,
) -> FeatureMap<T> {
    let mut gx = FeatureMap::zeros(x.channels(), x.frames(), x.height(), x.width());
    lma_band_backward(x, &mp.global_lma, 0, x.height(), gy, &mut grads.global_lma, &mut gx);
    let slab = x.height() / mp.l_parts();
    for (j, (p, gp)) in mp.part_lmas.iter().zip(grads.part_lmas.iter_mut()).enumerate() {
        lma_band_backward(x, p, j * slab, slab, gy, gp, &mut gx);
    }
    gx
}
