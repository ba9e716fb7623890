//! Windowed weighted-average filters.
//!
//! Every filter here has the form `J_p = sum_q w(p, q) I_q / sum_q w(p, q)`
//! over a square window truncated at the image border. They differ only in the
//! weight: spatial Gaussian, spatial times range Gaussian (bilateral), or
//! spatial times a co-occurrence matrix entry (CoF). A pixel whose weights sum
//! to zero is copied through unchanged.

mod apps;
mod baseline;
mod cof;
mod iterate;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CofError, Result};
use crate::image::{Image, Sample};

pub use apps::{fb_cof, propagate_scribbles, selective_gray, ScribbleSet, Stroke, DEFAULT_MASK_THRESHOLD, DEFAULT_SCRIBBLE_ITERATIONS};
pub use baseline::{bilateral, gaussian_filter};
pub use cof::{cof_gray, guided_cof};
pub use iterate::{iterate, FixedGuidance, GrayLevels, GuidanceModel, IterationOutcome};

pub const DEFAULT_WINDOW: usize = 7;

/// `sigma_s^2 = 2 sqrt(15) + 1` for the 15x15 window.
pub fn default_sigma_s() -> f64 {
    (2.0 * 15f64.sqrt() + 1.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IterationMode {
    /// Statistics learned once and reused every round.
    #[default]
    Iterative,
    /// Statistics re-learned from each round's output.
    Rolling,
}

impl std::str::FromStr for IterationMode {
    type Err = CofError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iterative" => Ok(Self::Iterative),
            "rolling" => Ok(Self::Rolling),
            other => Err(CofError::param("mode", format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    /// Window radius; the window is `(2 * window + 1)^2`.
    pub window: usize,
    pub sigma_s: f64,
    /// Range bandwidth for the bilateral filter.
    pub sigma_r: f64,
    pub iterations: usize,
    pub mode: IterationMode,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            sigma_s: default_sigma_s(),
            sigma_r: 0.1,
            iterations: 1,
            mode: IterationMode::Iterative,
        }
    }
}

impl FilterParams {
    pub fn with_window(window: usize, sigma_s: f64) -> Self {
        Self {
            window,
            sigma_s,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_s.is_finite() || self.sigma_s == f64::INFINITY) || self.sigma_s <= 0.0 {
            return Err(CofError::param("sigma_s", format!("{} must be > 0", self.sigma_s)));
        }
        if self.sigma_r.is_nan() || self.sigma_r < 0.0 {
            return Err(CofError::param("sigma_r", format!("{} must be >= 0", self.sigma_r)));
        }
        Ok(())
    }
}

/// Spatial Gaussian weights over the window, center weight 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialKernel {
    window: usize,
    weights: Vec<f64>,
}

impl SpatialKernel {
    pub fn new(window: usize, sigma_s: f64) -> Self {
        let side = 2 * window + 1;
        let w = window as isize;
        let denom = 2.0 * sigma_s * sigma_s;
        let weights = (-w..=w)
            .flat_map(|dy| (-w..=w).map(move |dx| (dx * dx + dy * dy) as f64))
            .map(|d2| if d2 == 0.0 { 1.0 } else { (-d2 / denom).exp() })
            .collect::<Vec<_>>();
        debug_assert_eq!(weights.len(), side * side);
        Self { window, weights }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn side(&self) -> usize {
        2 * self.window + 1
    }

    /// Weight at offset `(dx, dy)` from the center.
    #[inline]
    pub fn at(&self, dx: isize, dy: isize) -> f64 {
        let w = self.window as isize;
        self.weights[((dy + w) as usize) * self.side() + (dx + w) as usize]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Shared sliding-window engine. `range(p, q)` receives flat pixel indices.
pub(crate) fn windowed_average<P, R>(img: &Image<P>, kernel: &SpatialKernel, range: R) -> Image<P>
where
    P: Sample,
    R: Fn(usize, usize) -> f64 + Sync,
{
    let (width, height) = img.dimensions();
    let src = img.pixels();
    let r = kernel.window();
    let side = kernel.side();
    let weights = kernel.weights();
    let mut out = vec![P::zero(); width * height];

    out.par_chunks_mut(width.max(1))
        .enumerate()
        .for_each(|(y, row)| {
            let y0 = y.saturating_sub(r);
            let y1 = (y + r).min(height - 1);
            for (x, dst) in row.iter_mut().enumerate() {
                let p = y * width + x;
                let x0 = x.saturating_sub(r);
                let x1 = (x + r).min(width - 1);
                let mut num = P::zero();
                let mut den = 0.0;
                for qy in y0..=y1 {
                    let krow = &weights[(qy + r - y) * side..(qy + r - y + 1) * side];
                    let qrow = qy * width;
                    for qx in x0..=x1 {
                        let q = qrow + qx;
                        let w = krow[qx + r - x] * range(p, q);
                        num = src[q].weighted_add(w, num);
                        den += w;
                    }
                }
                *dst = if den > 0.0 { num.scale(1.0 / den) } else { src[p] };
            }
        });

    Image::from_parts(width, height, out)
}
