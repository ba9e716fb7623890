//! Dense row-major rasters.
//!
//! Samples are `f64` in `[0, 1]`; 8-bit values only appear at the I/O boundary.
//! A color pixel is a `[f64; 3]`, so the backing buffer of a [`ColorImage`] is
//! interleaved RGB.

use std::fmt::Debug;

use crate::error::{CofError, Result};

/// Per-pixel value type a filter can average.
pub trait Sample: Copy + Send + Sync + Debug + PartialEq + 'static {
    const CHANNELS: usize;

    fn zero() -> Self;

    fn channels(&self) -> &[f64];

    /// `acc + weight * self`
    fn weighted_add(self, weight: f64, acc: Self) -> Self;

    fn scale(self, factor: f64) -> Self;

    /// Squared Euclidean distance between two samples.
    fn dist_sq(self, other: Self) -> f64;
}

impl Sample for f64 {
    const CHANNELS: usize = 1;

    #[inline]
    fn zero() -> Self {
        0.0
    }

    #[inline]
    fn channels(&self) -> &[f64] {
        std::slice::from_ref(self)
    }

    #[inline]
    fn weighted_add(self, weight: f64, acc: Self) -> Self {
        acc + weight * self
    }

    #[inline]
    fn scale(self, factor: f64) -> Self {
        self * factor
    }

    #[inline]
    fn dist_sq(self, other: Self) -> f64 {
        let d = self - other;
        d * d
    }
}

impl Sample for [f64; 3] {
    const CHANNELS: usize = 3;

    #[inline]
    fn zero() -> Self {
        [0.0; 3]
    }

    #[inline]
    fn channels(&self) -> &[f64] {
        self
    }

    #[inline]
    fn weighted_add(self, weight: f64, acc: Self) -> Self {
        [
            acc[0] + weight * self[0],
            acc[1] + weight * self[1],
            acc[2] + weight * self[2],
        ]
    }

    #[inline]
    fn scale(self, factor: f64) -> Self {
        [self[0] * factor, self[1] * factor, self[2] * factor]
    }

    #[inline]
    fn dist_sq(self, other: Self) -> f64 {
        let d0 = self[0] - other[0];
        let d1 = self[1] - other[1];
        let d2 = self[2] - other[2];
        d0 * d0 + d1 * d1 + d2 * d2
    }
}

/// CIELAB triplet.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Lab {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

impl Lab {
    pub const fn new(l: f64, a: f64, b: f64) -> Self {
        Self { l, a, b }
    }

    #[inline]
    pub fn dist_sq(&self, other: &Lab) -> f64 {
        let dl = self.l - other.l;
        let da = self.a - other.a;
        let db = self.b - other.b;
        dl * dl + da * da + db * db
    }

    pub fn is_finite(&self) -> bool {
        self.l.is_finite() && self.a.is_finite() && self.b.is_finite()
    }
}

impl From<[f64; 3]> for Lab {
    fn from(v: [f64; 3]) -> Self {
        Lab::new(v[0], v[1], v[2])
    }
}

impl From<Lab> for [f64; 3] {
    fn from(v: Lab) -> Self {
        [v.l, v.a, v.b]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image<P> {
    width: usize,
    height: usize,
    data: Vec<P>,
}

pub type GrayImage = Image<f64>;
pub type ColorImage = Image<[f64; 3]>;
pub type LabImage = Image<Lab>;

impl<P> Image<P> {
    /// Builds an image without validating sample values. Only used for data
    /// produced by this crate's own operations.
    pub(crate) fn from_parts(width: usize, height: usize, data: Vec<P>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn pixels(&self) -> &[P] {
        &self.data
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [P] {
        &mut self.data
    }

    pub fn into_pixels(self) -> Vec<P> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn row(&self, y: usize) -> &[P] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn map<Q>(&self, f: impl Fn(&P) -> Q) -> Image<Q> {
        Image::from_parts(self.width, self.height, self.data.iter().map(f).collect())
    }

    pub(crate) fn ensure_same_dims<Q>(&self, other: &Image<Q>) -> Result<()> {
        if self.dimensions() != other.dimensions() {
            return Err(CofError::dims(self.dimensions(), other.dimensions()));
        }
        Ok(())
    }
}

impl<P: Copy> Image<P> {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> P {
        self.data[y * self.width + x]
    }

    pub fn filled(width: usize, height: usize, value: P) -> Self {
        Self::from_parts(width, height, vec![value; width * height])
    }
}

impl<P: Sample> Image<P> {
    /// Builds an image from row-major samples, checking the buffer length and
    /// that every channel is finite and within `[0, 1]`.
    pub fn new(width: usize, height: usize, data: Vec<P>) -> Result<Self> {
        if data.len() != width * height {
            return Err(CofError::InvalidImage(format!(
                "buffer holds {} pixels, {}x{} needs {}",
                data.len(),
                width,
                height,
                width * height
            )));
        }
        if let Some(bad) = data
            .iter()
            .flat_map(|p| p.channels().iter().copied())
            .find(|v| !(v.is_finite() && (0.0..=1.0).contains(v)))
        {
            return Err(CofError::InvalidImage(format!(
                "sample {bad} outside [0, 1]"
            )));
        }
        Ok(Self::from_parts(width, height, data))
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> P) -> Result<Self> {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, data)
    }

    /// All samples, channel-interleaved.
    pub fn samples(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().flat_map(|p| p.channels().iter().copied())
    }
}

impl GrayImage {
    /// Integer level view, `round(sample * 255)`.
    #[inline]
    pub fn level(&self, x: usize, y: usize) -> u8 {
        to_level(self.get(x, y))
    }

    pub fn levels(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_level(v)).collect()
    }

    pub fn from_levels(width: usize, height: usize, levels: &[u8]) -> Result<Self> {
        if levels.len() != width * height {
            return Err(CofError::InvalidImage(format!(
                "buffer holds {} pixels, {}x{} needs {}",
                levels.len(),
                width,
                height,
                width * height
            )));
        }
        Ok(Self::from_parts(
            width,
            height,
            levels.iter().map(|&l| f64::from(l) / 255.0).collect(),
        ))
    }

    /// Replicates the single channel into RGB.
    pub fn to_color(&self) -> ColorImage {
        self.map(|&v| [v, v, v])
    }
}

impl LabImage {
    pub fn from_lab(width: usize, height: usize, data: Vec<Lab>) -> Result<Self> {
        if data.len() != width * height {
            return Err(CofError::InvalidImage(format!(
                "buffer holds {} pixels, {}x{} needs {}",
                data.len(),
                width,
                height,
                width * height
            )));
        }
        if data.iter().any(|c| !c.is_finite()) {
            return Err(CofError::InvalidImage("non-finite Lab value".into()));
        }
        Ok(Self::from_parts(width, height, data))
    }
}

/// Maps a `[0, 1]` sample to an 8-bit level, rounding halves up.
#[inline]
pub fn to_level(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}
