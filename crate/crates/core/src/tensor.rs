//! Image, label and logit containers.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;
use core::iter::Sum;
use core::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating-point element type of network parameters and activations.
///
/// Training runs in `f32`; gradient checks run the same code in `f64`.
pub trait Scalar:
    Float + Default + Debug + Send + Sync + AddAssign + SubAssign + MulAssign + Sum + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Interleaved `H×W×C` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch {
                context: "image buffer",
                expected: (height, width, channels),
                found: (data.len(), 1, 1),
            });
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Channel-major copy (`C×H×W`) converted to `T`.
    pub fn to_planar<T: Scalar>(&self) -> Vec<T> {
        let hw = self.height * self.width;
        let mut out = vec![T::zero(); hw * self.channels];
        for (p, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * hw + p] = T::from_f64(f64::from(v));
            }
        }
        out
    }

    /// Mean over channels of each pixel.
    pub fn luminance(&self) -> Vec<f32> {
        self.data
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f32>() / self.channels as f32)
            .collect()
    }
}

pub type Label = u8;

/// `H×W` map of class indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<Label>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<Label>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch {
                context: "label buffer",
                expected: (height, width, 1),
                found: (data.len(), 1, 1),
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, label: Label) -> Self {
        Self { height, width, data: vec![label; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[Label] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Label] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> Label {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: Label) {
        self.data[y * self.width + x] = v;
    }

    /// Checks every value is a class index below `num_classes` or the ignore label.
    pub fn validate(&self, num_classes: usize, ignore_label: Option<Label>) -> Result<()> {
        match self
            .data
            .iter()
            .find(|&&v| usize::from(v) >= num_classes && Some(v) != ignore_label)
        {
            Some(&label) => Err(Error::LabelOutOfRange { label, num_classes }),
            None => Ok(()),
        }
    }
}

/// Pre-softmax class scores for every pixel.
///
/// Stored class-major: plane `k` holds the `H×W` scores of class `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsMap<T> {
    height: usize,
    width: usize,
    classes: usize,
    data: Vec<T>,
}

impl<T: Scalar> LogitsMap<T> {
    pub fn new(height: usize, width: usize, classes: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * classes {
            return Err(Error::ShapeMismatch {
                context: "logits buffer",
                expected: (height, width, classes),
                found: (data.len(), 1, 1),
            });
        }
        Ok(Self { height, width, classes, data })
    }

    /// Builds a map from per-pixel score vectors given in row-major pixel order.
    pub fn from_pixels(height: usize, width: usize, pixels: &[&[T]]) -> Result<Self> {
        let classes = pixels.first().map_or(0, |p| p.len());
        if pixels.len() != height * width || pixels.iter().any(|p| p.len() != classes) {
            return Err(Error::ShapeMismatch {
                context: "logits pixels",
                expected: (height, width, classes),
                found: (pixels.len(), 1, 1),
            });
        }
        let hw = height * width;
        let mut data = vec![T::zero(); hw * classes];
        for (p, px) in pixels.iter().enumerate() {
            for (k, &v) in px.iter().enumerate() {
                data[k * hw + p] = v;
            }
        }
        Ok(Self { height, width, classes, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.classes)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, k: usize) -> T {
        self.data[k * self.height * self.width + y * self.width + x]
    }

    pub fn plane(&self, k: usize) -> &[T] {
        let hw = self.height * self.width;
        &self.data[k * hw..(k + 1) * hw]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Per-pixel softmax, same layout as the logits.
    pub fn softmax(&self) -> Vec<T> {
        let hw = self.height * self.width;
        let mut out = vec![T::zero(); self.data.len()];
        for p in 0..hw {
            let mut max = T::neg_infinity();
            for k in 0..self.classes {
                max = max.max(self.data[k * hw + p]);
            }
            let mut sum = T::zero();
            for k in 0..self.classes {
                let e = (self.data[k * hw + p] - max).exp();
                out[k * hw + p] = e;
                sum += e;
            }
            for k in 0..self.classes {
                out[k * hw + p] = out[k * hw + p] / sum;
            }
        }
        out
    }

    /// Per-pixel argmax; ties go to the lowest class index.
    pub fn argmax(&self) -> LabelMap {
        let hw = self.height * self.width;
        let mut labels = vec![0 as Label; hw];
        for (p, label) in labels.iter_mut().enumerate() {
            let mut best = self.data[p];
            for k in 1..self.classes {
                let v = self.data[k * hw + p];
                if v > best {
                    best = v;
                    *label = k as Label;
                }
            }
        }
        LabelMap { height: self.height, width: self.width, data: labels }
    }
}
