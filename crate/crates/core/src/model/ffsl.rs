//! Full-body and fine-grained sequence learning: a full-height 3D conv (BME)
//! summed with independent per-slab 3D convs (PME).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::PmeMode;
use super::conv::{Conv3dWeights, DepthwiseSeparable3dWeights};
use crate::error::{GaitError, Result};
use crate::scalar::Scalar;
use crate::tensor::FeatureMap;

/// One entry of a part filter bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PartConv<T> {
    Standard(Conv3dWeights<T>),
    DepthwiseSeparable(DepthwiseSeparable3dWeights<T>),
}

impl<T: Scalar> PartConv<T> {
    pub fn zeros(mode: PmeMode, out_channels: usize, in_channels: usize) -> Self {
        match mode {
            PmeMode::Standard => PartConv::Standard(Conv3dWeights::zeros(out_channels, in_channels)),
            PmeMode::DepthwiseSeparable => {
                PartConv::DepthwiseSeparable(DepthwiseSeparable3dWeights::zeros(out_channels, in_channels))
            }
        }
    }

    pub fn init<R: Rng + ?Sized>(mode: PmeMode, out_channels: usize, in_channels: usize, rng: &mut R) -> Self {
        match mode {
            PmeMode::Standard => PartConv::Standard(Conv3dWeights::init(out_channels, in_channels, rng)),
            PmeMode::DepthwiseSeparable => {
                PartConv::DepthwiseSeparable(DepthwiseSeparable3dWeights::init(out_channels, in_channels, rng))
            }
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            PartConv::Standard(w) => w.out_channels,
            PartConv::DepthwiseSeparable(w) => w.out_channels,
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            PartConv::Standard(w) => w.num_params(),
            PartConv::DepthwiseSeparable(w) => w.num_params(),
        }
    }

    fn forward_band(&self, x: &FeatureMap<T>, row0: usize, rows: usize, out: &mut FeatureMap<T>, accumulate: bool) -> Result<()> {
        match self {
            PartConv::Standard(w) => w.forward_band(x, row0, rows, out, accumulate),
            PartConv::DepthwiseSeparable(w) => w.forward_band(x, row0, rows, out, accumulate),
        }
    }

    fn backward_band(
        &self,
        x: &FeatureMap<T>,
        row0: usize,
        rows: usize,
        gy: &FeatureMap<T>,
        grad: &mut Self,
        gx: Option<&mut FeatureMap<T>>,
    ) {
        match (self, grad) {
            (PartConv::Standard(w), PartConv::Standard(g)) => w.backward_band(x, row0, rows, gy, g, gx),
            (PartConv::DepthwiseSeparable(w), PartConv::DepthwiseSeparable(g)) => w.backward_band(x, row0, rows, gy, g, gx),
            _ => panic!("gradient buffer does not match part filter mode"),
        }
    }

    pub(crate) fn tensors(&self) -> Vec<&[T]> {
        match self {
            PartConv::Standard(w) => vec![&w.kernel, &w.bias],
            PartConv::DepthwiseSeparable(w) => vec![&w.depthwise, &w.pointwise, &w.bias],
        }
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            PartConv::Standard(w) => vec![&mut w.kernel, &mut w.bias],
            PartConv::DepthwiseSeparable(w) => vec![&mut w.depthwise, &mut w.pointwise, &mut w.bias],
        }
    }
}

/// Non-shared filters, one per horizontal slab.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartFilterBank<T> {
    pub banks: Vec<PartConv<T>>,
}

impl<T: Scalar> PartFilterBank<T> {
    pub fn k_parts(&self) -> usize {
        self.banks.len()
    }

    pub fn zeros(mode: PmeMode, k_parts: usize, out_channels: usize, in_channels: usize) -> Self {
        Self { banks: (0..k_parts).map(|_| PartConv::zeros(mode, out_channels, in_channels)).collect() }
    }

    pub fn init<R: Rng + ?Sized>(mode: PmeMode, k_parts: usize, out_channels: usize, in_channels: usize, rng: &mut R) -> Self {
        Self { banks: (0..k_parts).map(|_| PartConv::init(mode, out_channels, in_channels, rng)).collect() }
    }

    pub fn num_params(&self) -> usize {
        self.banks.iter().map(PartConv::num_params).sum()
    }

    fn slab_height(&self, height: usize) -> Result<usize> {
        let k = self.k_parts();
        if k == 0 || height % k != 0 {
            return Err(GaitError::Config(format!("height {height} is not divisible by k_parts {k}")));
        }
        Ok(height / k)
    }
}

/// Weights of one FFSL block. `pme` is absent in the BME-only ablations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FfslParams<T> {
    pub bme: Conv3dWeights<T>,
    pub pme: Option<PartFilterBank<T>>,
}

/// Full-body 3×3×3 convolution, shape preserving.
pub fn bme_forward<T: Scalar>(x: &FeatureMap<T>, w: &Conv3dWeights<T>) -> Result<FeatureMap<T>> {
    let mut out = FeatureMap::zeros(w.out_channels, x.frames(), x.height(), x.width());
    w.forward_band(x, 0, x.height(), &mut out, false)?;
    Ok(out)
}

/// Splits `x` into `k` horizontal slabs, convolves slab `j` with `banks[j]`
/// only and stacks the results top to bottom.
pub fn pme_forward<T: Scalar>(x: &FeatureMap<T>, bank: &PartFilterBank<T>) -> Result<FeatureMap<T>> {
    let slab = bank.slab_height(x.height())?;
    let out_channels = bank.banks[0].out_channels();
    let mut out = FeatureMap::zeros(out_channels, x.frames(), x.height(), x.width());
    for (j, part) in bank.banks.iter().enumerate() {
        part.forward_band(x, j * slab, slab, &mut out, false)?;
    }
    Ok(out)
}

#[inline]
pub(crate) fn leaky_relu<T: Scalar>(v: T, slope: T) -> T {
    if v > T::zero() {
        v
    } else {
        v * slope
    }
}

/// `leaky_relu(BME(x) + PME(x))`, or the BME path alone without a part bank.
pub fn ffsl_forward<T: Scalar>(
    x: &FeatureMap<T>,
    bme: &Conv3dWeights<T>,
    pme: Option<&PartFilterBank<T>>,
    slope: T,
) -> Result<FeatureMap<T>> {
    let mut out = FeatureMap::zeros(bme.out_channels, x.frames(), x.height(), x.width());
    bme.forward_band(x, 0, x.height(), &mut out, false)?;
    if let Some(bank) = pme {
        let slab = bank.slab_height(x.height())?;
        for (j, part) in bank.banks.iter().enumerate() {
            if part.out_channels() != bme.out_channels {
                return Err(GaitError::Config(format!(
                    "PME part {j} has {} output channels, BME has {}",
                    part.out_channels(),
                    bme.out_channels
                )));
            }
            part.forward_band(x, j * slab, slab, &mut out, true)?;
        }
    }
    for v in out.as_mut_slice() {
        *v = leaky_relu(*v, slope);
    }
    Ok(out)
}

/// Backward through [`ffsl_forward`] given its input `x` and output `y`.
/// Returns the input gradient when `want_input_grad` is set.
pub(crate) fn ffsl_backward<T: Scalar>(
    x: &FeatureMap<T>,
    y: &FeatureMap<T>,
    gy: &FeatureMap<T>,
    params: &FfslParams<T>,
    grads: &mut FfslParams<T>,
    slope: T,
    want_input_grad: bool,
) -> Option<FeatureMap<T>> {
    let mut gs = gy.clone();
    for (g, &v) in gs.as_mut_slice().iter_mut().zip(y.as_slice()) {
        if v <= T::zero() {
            *g *= slope;
        }
    }
    let mut gx = want_input_grad.then(|| FeatureMap::zeros(x.channels(), x.frames(), x.height(), x.width()));
    params.bme.backward_band(x, 0, x.height(), &gs, &mut grads.bme, gx.as_mut());
    if let (Some(bank), Some(gbank)) = (&params.pme, &mut grads.pme) {
        let slab = x.height() / bank.k_parts();
        for (j, (part, gpart)) in bank.banks.iter().zip(gbank.banks.iter_mut()).enumerate() {
            part.backward_band(x, j * slab, slab, &gs, gpart, gx.as_mut());
        }
    }
    gx
}
