//! Dense `channels × frames × height × width` feature maps.

use crate::error::{GaitError, Result};
use crate::scalar::Scalar;

/// Real 4-D tensor flowing through the network, stored row-major as
/// `[channel][frame][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    channels: usize,
    frames: usize,
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(channels: usize, frames: usize, height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if channels == 0 || frames == 0 || height == 0 || width == 0 {
            return Err(GaitError::Shape(format!(
                "all dimensions must be positive, got {channels}x{frames}x{height}x{width}"
            )));
        }
        let want = channels * frames * height * width;
        if values.len() != want {
            return Err(GaitError::Shape(format!(
                "value array has {} elements, shape {channels}x{frames}x{height}x{width} needs {want}",
                values.len()
            )));
        }
        Ok(Self { channels, frames, height, width, values })
    }

    pub fn zeros(channels: usize, frames: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, frames, height, width, T::zero())
    }

    pub fn filled(channels: usize, frames: usize, height: usize, width: usize, value: T) -> Self {
        assert!(channels > 0 && frames > 0 && height > 0 && width > 0, "feature map dimensions must be positive");
        Self { channels, frames, height, width, values: vec![value; channels * frames * height * width] }
    }

    pub fn from_fn(
        channels: usize,
        frames: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> T,
    ) -> Self {
        let mut values = Vec::with_capacity(channels * frames * height * width);
        for c in 0..channels {
            for t in 0..frames {
                for h in 0..height {
                    for w in 0..width {
                        values.push(f(c, t, h, w));
                    }
                }
            }
        }
        Self::new(channels, frames, height, width, values).expect("from_fn builds a consistent shape")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.channels, self.frames, self.height, self.width]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn channel_len(&self) -> usize {
        self.frames * self.height * self.width
    }

    #[inline]
    pub fn index(&self, c: usize, t: usize, h: usize, w: usize) -> usize {
        ((c * self.frames + t) * self.height + h) * self.width + w
    }

    #[inline]
    pub fn get(&self, c: usize, t: usize, h: usize, w: usize) -> T {
        self.values[self.index(c, t, h, w)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, t: usize, h: usize, w: usize, v: T) {
        let i = self.index(c, t, h, w);
        self.values[i] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert!(self.same_shape(other), "add_assign shape mismatch");
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { values: self.values.iter().map(|&v| f(v)).collect(), ..*self }
    }

    /// Copy of rows `[row0, row0 + rows)` of every frame and channel.
    pub fn rows(&self, row0: usize, rows: usize) -> Self {
        assert!(row0 + rows <= self.height && rows > 0);
        Self::from_fn(self.channels, self.frames, rows, self.width, |c, t, h, w| self.get(c, t, row0 + h, w))
    }

    /// Copy of frames `[t0, t0 + count)`.
    pub fn frame_range(&self, t0: usize, count: usize) -> Self {
        assert!(t0 + count <= self.frames && count > 0);
        Self::from_fn(self.channels, count, self.height, self.width, |c, t, h, w| self.get(c, t0 + t, h, w))
    }

    /// Writes `src` into rows starting at `row0`; widths, frames and channels must agree.
    pub fn write_rows(&mut self, row0: usize, src: &Self) {
        assert_eq!(src.channels, self.channels);
        assert_eq!(src.frames, self.frames);
        assert_eq!(src.width, self.width);
        assert!(row0 + src.height <= self.height);
        for c in 0..src.channels {
            for t in 0..src.frames {
                for h in 0..src.height {
                    let dst = self.index(c, t, row0 + h, 0);
                    let s = src.index(c, t, h, 0);
                    self.values[dst..dst + self.width].copy_from_slice(&src.values[s..s + src.width]);
                }
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> FeatureMap<U> {
        FeatureMap {
            channels: self.channels,
            frames: self.frames,
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Row-major 2-D matrix; strip embeddings and logits are `strips × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(GaitError::Shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, values: vec![T::zero(); rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        Self { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, values: self.values.iter().map(|v| U::lit(v.as_f64())).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_value_count() {
        let err = FeatureMap::<f64>::new(1, 2, 2, 2, vec![0.0; 7]).unwrap_err();
        assert!(matches!(err, GaitError::Shape(_)));
        assert!(FeatureMap::<f64>::new(0, 2, 2, 2, vec![]).is_err());
    }

    #[test]
    fn row_slices_round_trip() {
        let x = FeatureMap::<f32>::from_fn(2, 3, 4, 5, |c, t, h, w| (c * 1000 + t * 100 + h * 10 + w) as f32);
        let mut y = FeatureMap::zeros(2, 3, 4, 5);
        y.write_rows(0, &x.rows(0, 2));
        y.write_rows(2, &x.rows(2, 2));
        assert_eq!(x, y);
        assert_eq!(x.get(1, 2, 3, 4), 1234.0);
    }
}
