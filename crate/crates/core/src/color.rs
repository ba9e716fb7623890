//! Color conversions and image differences.

use rayon::prelude::*;

use crate::error::{CofError, Result};
use crate::image::{ColorImage, GrayImage, Image, Lab, LabImage, Sample};

// sRGB primaries, D65 white.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];
const WHITE_D65: [f64; 3] = [0.950_47, 1.0, 1.088_83];

const LUMA_601: [f64; 3] = [0.299, 0.587, 0.114];

#[inline]
fn srgb_decode(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// Converts one sRGB pixel (components in `[0, 1]`) to CIELAB.
pub fn srgb_to_lab(rgb: [f64; 3]) -> Lab {
    let lin = rgb.map(srgb_decode);
    let xyz: [f64; 3] = std::array::from_fn(|i| {
        RGB_TO_XYZ[i][0] * lin[0] + RGB_TO_XYZ[i][1] * lin[1] + RGB_TO_XYZ[i][2] * lin[2]
    });
    let fx = lab_f(xyz[0] / WHITE_D65[0]);
    let fy = lab_f(xyz[1] / WHITE_D65[1]);
    let fz = lab_f(xyz[2] / WHITE_D65[2]);
    Lab::new(116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz))
}

pub fn rgb_to_lab(img: &ColorImage) -> LabImage {
    let data = img.pixels().par_iter().map(|&p| srgb_to_lab(p)).collect();
    Image::from_parts(img.width(), img.height(), data)
}

/// Rec. 601 luma.
#[inline]
pub fn luma(rgb: [f64; 3]) -> f64 {
    LUMA_601[0] * rgb[0] + LUMA_601[1] * rgb[1] + LUMA_601[2] * rgb[2]
}

pub fn rgb_to_gray(img: &ColorImage) -> GrayImage {
    let data = img.pixels().par_iter().map(|&p| luma(p)).collect();
    Image::from_parts(img.width(), img.height(), data)
}

/// Mean of squared per-sample differences.
pub fn mse<P: Sample>(a: &Image<P>, b: &Image<P>) -> Result<f64> {
    a.ensure_same_dims(b)?;
    if a.is_empty() {
        return Err(CofError::InvalidImage("empty image".into()));
    }
    let sum: f64 = a
        .samples()
        .zip(b.samples())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / (a.len() * P::CHANNELS) as f64)
}
