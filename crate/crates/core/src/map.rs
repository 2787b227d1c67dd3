//! In-memory grids: feature maps, saliency maps, binary masks and RGB images.

use crate::error::{dim_mismatch, Error, Result};

/// Dense `height x width x depth` grid of non-negative feature vectors.
///
/// Storage is C-order with the channel axis innermost, so the feature vector
/// of cell `m = row * width + col` is the contiguous slice
/// `data[m * depth..(m + 1) * depth]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    depth: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, depth: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || depth == 0 {
            return Err(dim_mismatch(format!(
                "feature map dims must be positive, got {height}x{width}x{depth}"
            )));
        }
        if data.len() != height * width * depth {
            return Err(dim_mismatch(format!(
                "feature map {height}x{width}x{depth} needs {} values, got {}",
                height * width * depth,
                data.len()
            )));
        }
        for (index, &v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(index));
            }
            if v < 0.0 {
                return Err(Error::NegativeFeature {
                    index,
                    value: v as f32,
                });
            }
        }
        Ok(Self {
            height,
            width,
            depth,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, depth: usize) -> Self {
        Self {
            height,
            width,
            depth,
            data: vec![0.0; height * width * depth],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Number of feature vectors (grid cells).
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn feature(&self, m: usize) -> &[f64] {
        &self.data[m * self.depth..(m + 1) * self.depth]
    }

    #[inline]
    pub fn value(&self, m: usize, j: usize) -> f64 {
        self.data[m * self.depth + j]
    }

    /// Copy of this map with every feature except `m` replaced by zeros.
    pub fn isolate(&self, m: usize) -> Self {
        let mut out = Self::zeros(self.height, self.width, self.depth);
        out.data[m * self.depth..(m + 1) * self.depth].copy_from_slice(self.feature(m));
        out
    }
}

/// Single-channel map with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(dim_mismatch(format!(
                "saliency map dims must be positive, got {height}x{width}"
            )));
        }
        if values.len() != height * width {
            return Err(dim_mismatch(format!(
                "saliency map {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(i) = values
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(Error::DimMismatch(format!(
                "saliency value {} at index {i} outside [0, 1]",
                values[i]
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// Builds a map, clamping every value into `[0, 1]` (NaN becomes 0).
    pub fn clamped(height: usize, width: usize, mut values: Vec<f64>) -> Result<Self> {
        for v in values.iter_mut() {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(height, width, values)
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && (0.0..=1.0).contains(&value));
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, 0.0)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Elementwise combination of two maps of equal size; the result is clamped to `[0, 1]`.
    pub fn zip_with(&self, other: &SaliencyMap, f: impl Fn(f64, f64) -> f64) -> Result<SaliencyMap> {
        self.check_same_dims(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        SaliencyMap::clamped(self.height, self.width, values)
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> SaliencyMap {
        let values = self.values.iter().map(|&v| f(v)).collect();
        SaliencyMap::clamped(self.height, self.width, values).expect("dims unchanged")
    }

    pub fn check_same_dims(&self, other: &SaliencyMap) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(dim_mismatch(format!(
                "map {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    /// Crops to the top-left `height x width` window.
    pub fn crop(&self, height: usize, width: usize) -> Result<SaliencyMap> {
        if height > self.height || width > self.width || height == 0 || width == 0 {
            return Err(dim_mismatch(format!(
                "cannot crop {}x{} to {height}x{width}",
                self.height, self.width
            )));
        }
        SaliencyMap::from_fn(height, width, |r, c| self.get(r, c))
    }

    /// Block-mean downsampling by an integer `factor`; output dims are
    /// `ceil(h / factor) x ceil(w / factor)`, partial edge blocks average the
    /// pixels they contain.
    pub fn block_mean(&self, factor: usize) -> SaliencyMap {
        assert!(factor > 0);
        let oh = self.height.div_ceil(factor);
        let ow = self.width.div_ceil(factor);
        let mut sums = vec![0.0; oh * ow];
        let mut counts = vec![0usize; oh * ow];
        for r in 0..self.height {
            for c in 0..self.width {
                let k = (r / factor) * ow + c / factor;
                sums[k] += self.get(r, c);
                counts[k] += 1;
            }
        }
        let values = sums
            .iter()
            .zip(&counts)
            .map(|(s, &n)| s / n as f64)
            .collect();
        SaliencyMap::clamped(oh, ow, values).expect("non-empty")
    }

    /// Brings a map to a `height x width` feature grid: maps already at that
    /// size pass through; larger maps are block-mean downsampled by `stride`
    /// and cropped.
    pub fn to_grid(&self, height: usize, width: usize, stride: usize) -> Result<SaliencyMap> {
        if self.dims() == (height, width) {
            return Ok(self.clone());
        }
        let small = self.block_mean(stride);
        if small.height < height || small.width < width {
            return Err(dim_mismatch(format!(
                "map {}x{} is too small for a {height}x{width} grid at stride {stride}",
                self.height, self.width
            )));
        }
        small.crop(height, width)
    }
}

/// Boolean pixel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(dim_mismatch(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            bits,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        if self.dims() != other.dims() {
            return Err(dim_mismatch("mask union dims"));
        }
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect();
        Mask::new(self.height, self.width, bits)
    }

    pub fn to_map(&self) -> SaliencyMap {
        let values = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        SaliencyMap::new(self.height, self.width, values).expect("binary values")
    }
}

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(dim_mismatch(format!(
                "rgb image {height}x{width} needs {} bytes, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for r in 0..height {
            for c in 0..width {
                data.extend_from_slice(&f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn is_empty(&self) -> bool {
        self.height == 0 || self.width == 0
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}


/// Axis-aligned pixel rectangle `[x, x + w) x [y, y + h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl PixelBox {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    /// From inclusive-exclusive corners `(x0, y0)`-`(x1, y1)`.
    pub fn from_corners(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self::new(x0, y0, x1.saturating_sub(x0), y1.saturating_sub(y0))
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }

    pub fn intersection_area(&self, other: &PixelBox) -> usize {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.w).min(other.x + other.w);
        let y1 = (self.y + self.h).min(other.y + other.h);
        x1.saturating_sub(x0) * y1.saturating_sub(y0)
    }

    pub fn iou(&self, other: &PixelBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn to_mask(&self, height: usize, width: usize) -> Mask {
        Mask::from_fn(height, width, |r, c| self.contains(c, r))
    }
}
