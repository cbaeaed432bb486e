//! Dense 2-D and 3-D scalar fields plus the fixed-kernel operations the rest
//! of the crate is built on: same-padded 3x3 convolution, clipped average
//! pooling, nearest and bilinear resampling.
//!
//! Grids are immutable values in spirit: every operation returns a fresh grid.

use crate::scalar::Scalar;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GridError {
    #[error("data length {got} does not match {h}x{w}")]
    LengthMismatch { h: usize, w: usize, got: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("dimensions must be positive, got {h}x{w}")]
    EmptyDims { h: usize, w: usize },
    #[error("pooling kernel must be odd, got {0}")]
    EvenKernel(usize),
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
}

/// Single-channel H x W field, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T: Scalar = f64> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Grid<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self, GridError> {
        if height == 0 || width == 0 {
            return Err(GridError::EmptyDims { h: height, w: width });
        }
        if data.len() != height * width {
            return Err(GridError::LengthMismatch { h: height, w: width, got: data.len() });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, v: T) -> Self {
        assert!(height > 0 && width > 0, "grid dims must be positive");
        Self { height, width, data: vec![v; height * width] }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::zero())
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.width + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.width + j] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<(), GridError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(GridError::ShapeMismatch(self.height, self.width, other.height, other.width))
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert!(self.same_shape(other), "zip_map shape mismatch");
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |a, &b| a + b)
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_f64c(self.len() as f64)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.max(T::zero()).min(T::one()))
    }

    pub fn max_value(&self) -> T {
        self.data.iter().fold(T::neg_infinity(), |a, &b| a.max(b))
    }

    /// Zero-padded, unit-stride, same-size 3x3 cross-correlation.
    pub fn conv2d_same(&self, k: &Kernel3x3<T>) -> Self {
        let (h, w) = (self.height as isize, self.width as isize);
        let mut out = Vec::with_capacity(self.data.len());
        for i in 0..h {
            for j in 0..w {
                let mut acc = T::zero();
                for di in -1..=1isize {
                    for dj in -1..=1isize {
                        let (si, sj) = (i + di, j + dj);
                        if si >= 0 && si < h && sj >= 0 && sj < w {
                            let kv = k.weights[((di + 1) * 3 + (dj + 1)) as usize];
                            acc += kv * self.data[(si * w + sj) as usize];
                        }
                    }
                }
                out.push(acc);
            }
        }
        Self { height: self.height, width: self.width, data: out }
    }

    /// Same-size average pooling; the divisor is the count of in-bounds cells.
    pub fn avg_pool_same(&self, k: usize) -> Result<Self, GridError> {
        if k.is_multiple_of(2) || k == 0 {
            return Err(GridError::EvenKernel(k));
        }
        let r = (k / 2) as isize;
        let (h, w) = (self.height as isize, self.width as isize);
        let mut out = Vec::with_capacity(self.data.len());
        for i in 0..h {
            for j in 0..w {
                let i0 = (i - r).max(0);
                let i1 = (i + r).min(h - 1);
                let j0 = (j - r).max(0);
                let j1 = (j + r).min(w - 1);
                let mut acc = T::zero();
                for si in i0..=i1 {
                    for sj in j0..=j1 {
                        acc += self.data[(si * w + sj) as usize];
                    }
                }
                let count = ((i1 - i0 + 1) * (j1 - j0 + 1)) as f64;
                out.push(acc / T::from_f64c(count));
            }
        }
        Ok(Self { height: self.height, width: self.width, data: out })
    }

    /// Nearest-neighbour resampling: source index = floor(target * src/dst).
    pub fn resize_nearest(&self, h2: usize, w2: usize) -> Result<Self, GridError> {
        if h2 == 0 || w2 == 0 {
            return Err(GridError::EmptyDims { h: h2, w: w2 });
        }
        if h2 == self.height && w2 == self.width {
            return Ok(self.clone());
        }
        let sh = self.height as f64 / h2 as f64;
        let sw = self.width as f64 / w2 as f64;
        let mut data = Vec::with_capacity(h2 * w2);
        for i in 0..h2 {
            let si = ((i as f64 * sh).floor() as usize).min(self.height - 1);
            for j in 0..w2 {
                let sj = ((j as f64 * sw).floor() as usize).min(self.width - 1);
                data.push(self.get(si, sj));
            }
        }
        Ok(Self { height: h2, width: w2, data })
    }

    /// Bilinear resampling with align-corners-false sample placement.
    pub fn resize_bilinear(&self, h2: usize, w2: usize) -> Result<Self, GridError> {
        if h2 == 0 || w2 == 0 {
            return Err(GridError::EmptyDims { h: h2, w: w2 });
        }
        if h2 == self.height && w2 == self.width {
            return Ok(self.clone());
        }
        let mut data = Vec::with_capacity(h2 * w2);
        for i in 0..h2 {
            let (i0, i1, fi) = bilinear_axis(i, h2, self.height);
            for j in 0..w2 {
                let (j0, j1, fj) = bilinear_axis(j, w2, self.width);
                let a = self.get(i0, j0).to_f64().unwrap();
                let b = self.get(i0, j1).to_f64().unwrap();
                let c = self.get(i1, j0).to_f64().unwrap();
                let d = self.get(i1, j1).to_f64().unwrap();
                let top = a + (b - a) * fj;
                let bot = c + (d - c) * fj;
                data.push(T::from_f64c(top + (bot - top) * fi));
            }
        }
        Ok(Self { height: h2, width: w2, data })
    }
}

/// For one output index, the two source rows/cols and the interpolation
/// fraction under align-corners-false.
pub(crate) fn bilinear_axis(dst: usize, dst_len: usize, src_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let pos = (dst as f64 + 0.5) * scale - 0.5;
    let pos = pos.max(0.0);
    let lo = (pos.floor() as usize).min(src_len - 1);
    let hi = (lo + 1).min(src_len - 1);
    let frac = if hi > lo { pos - lo as f64 } else { 0.0 };
    (lo, hi, frac)
}

/// Fixed 3x3 kernel, row-major weights. Immutable once constructed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel3x3<T: Scalar = f64> {
    pub weights: [T; 9],
}

impl<T: Scalar> Kernel3x3<T> {
    pub fn new(weights: [T; 9]) -> Self {
        Self { weights }
    }

    fn from_f64s(w: [f64; 9]) -> Self {
        let mut out = [T::zero(); 9];
        for (o, v) in out.iter_mut().zip(w) {
            *o = T::from_f64c(v);
        }
        Self { weights: out }
    }

    /// Horizontal-gradient Sobel kernel.
    pub fn sobel_x() -> Self {
        Self::from_f64s([-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0])
    }

    /// Vertical-gradient Sobel kernel.
    pub fn sobel_y() -> Self {
        Self::from_f64s([-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0])
    }

    pub fn prewitt_x() -> Self {
        Self::from_f64s([-1.0, 0.0, 1.0, -1.0, 0.0, 1.0, -1.0, 0.0, 1.0])
    }

    pub fn prewitt_y() -> Self {
        Self::from_f64s([-1.0, -1.0, -1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
    }

    /// 4-neighbour discrete Laplacian.
    pub fn laplacian() -> Self {
        Self::from_f64s([0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0])
    }

    /// 180-degree rotation; the adjoint of `conv2d_same` correlates with this.
    pub fn flipped(&self) -> Self {
        let w = &self.weights;
        Self::new([w[8], w[7], w[6], w[5], w[4], w[3], w[2], w[1], w[0]])
    }
}

/// Multi-channel C x H x W field, channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T: Scalar = f64> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self, GridError> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(GridError::EmptyDims { h: height, w: width });
        }
        if data.len() != channels * height * width {
            return Err(GridError::LengthMismatch { h: height, w: width, got: data.len() });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn from_channels(grids: &[Grid<T>]) -> Result<Self, GridError> {
        assert!(!grids.is_empty(), "need at least one channel");
        let (h, w) = (grids[0].height(), grids[0].width());
        let mut data = Vec::with_capacity(grids.len() * h * w);
        for g in grids {
            grids[0].check_same_shape(g)?;
            data.extend_from_slice(g.data());
        }
        Self::new(grids.len(), h, w, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> Grid<T> {
        let n = self.height * self.width;
        Grid {
            height: self.height,
            width: self.width,
            data: self.data[c * n..(c + 1) * n].to_vec(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert!(
            self.channels == other.channels && self.height == other.height && self.width == other.width,
            "feature map shape mismatch"
        );
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |a, &b| a + b)
    }
}
