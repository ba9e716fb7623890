//! Deterministic synthetic inputs.
//!
//! * `two-region-checkerboard`: a dark left half and a light right half with
//!   high-contrast checkerboard patches scattered over both halves. The
//!   checkerboard contrast exceeds the step between the halves.
//! * `ramp`: horizontal gray ramp; at width 256 column `x` has level `x`.
//! * `step-stripes`: vertical stripes separated by step edges.
//! * `star-field`: bright specks on a dark background.
//!
//! All generators add clamped white Gaussian noise of the given sigma.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{CofError, Result};
use crate::image::{GrayImage, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fixture {
    TwoRegionCheckerboard,
    Ramp,
    StepStripes,
    StarField,
}

impl Fixture {
    pub const ALL: [Fixture; 4] = [
        Fixture::TwoRegionCheckerboard,
        Fixture::Ramp,
        Fixture::StepStripes,
        Fixture::StarField,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Fixture::TwoRegionCheckerboard => "two-region-checkerboard",
            Fixture::Ramp => "ramp",
            Fixture::StepStripes => "step-stripes",
            Fixture::StarField => "star-field",
        }
    }
}

impl FromStr for Fixture {
    type Err = CofError;

    fn from_str(s: &str) -> Result<Self> {
        Fixture::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| CofError::UnknownFixture(s.to_string()))
    }
}

/// Layout constants of the two-region checkerboard fixture.
pub mod checkerboard {
    pub const DARK: f64 = 0.4;
    pub const LIGHT: f64 = 0.6;
    pub const BLACK: f64 = 0.1;
    pub const WHITE: f64 = 0.9;
    /// Side of one checker square, in pixels.
    pub const CELL: usize = 2;

    /// Patch rectangles `(x0, y0, x1, y1)`, exclusive upper bounds. The image
    /// is split into a 4x4 grid and every other grid cell holds a centered
    /// patch half the cell's size.
    pub fn patches(size: usize) -> Vec<(usize, usize, usize, usize)> {
        let cell = size / 4;
        let margin = cell / 4;
        let mut out = Vec::new();
        for gy in 0..4 {
            for gx in 0..4 {
                if (gx + gy) % 2 == 0 {
                    let x0 = gx * cell + margin;
                    let y0 = gy * cell + margin;
                    out.push((x0, y0, x0 + cell / 2, y0 + cell / 2));
                }
            }
        }
        out
    }

    pub fn clean_value(size: usize, x: usize, y: usize) -> f64 {
        for (x0, y0, x1, y1) in patches(size) {
            if x >= x0 && x < x1 && y >= y0 && y < y1 {
                let parity = ((x - x0) / CELL + (y - y0) / CELL) % 2;
                return if parity == 0 { BLACK } else { WHITE };
            }
        }
        if x < size / 2 {
            DARK
        } else {
            LIGHT
        }
    }
}

const STRIPE_LEVELS: [f64; 6] = [0.2, 0.45, 0.7, 0.35, 0.8, 0.55];
const STAR_BACKGROUND: f64 = 0.05;
const STAR_BRIGHT: f64 = 0.95;
/// One star per this many pixels.
const STAR_DENSITY: usize = 64;

/// Generates a `size x size` fixture.
pub fn make_fixture(fixture: Fixture, size: usize, noise_sigma: f64, seed: u64) -> Result<GrayImage> {
    if size < 8 {
        return Err(CofError::param("size", format!("{size} is below the minimum of 8")));
    }
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(CofError::param("noise_sigma", format!("{noise_sigma} must be >= 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut data: Vec<f64> = match fixture {
        Fixture::TwoRegionCheckerboard => (0..size * size)
            .map(|i| checkerboard::clean_value(size, i % size, i / size))
            .collect(),
        Fixture::Ramp => (0..size * size)
            .map(|i| (i % size) as f64 / (size - 1) as f64)
            .collect(),
        Fixture::StepStripes => {
            let n = STRIPE_LEVELS.len();
            (0..size * size)
                .map(|i| STRIPE_LEVELS[((i % size) * n / size).min(n - 1)])
                .collect()
        }
        Fixture::StarField => {
            let mut data = vec![STAR_BACKGROUND; size * size];
            for _ in 0..(size * size / STAR_DENSITY).max(1) {
                let cx = rng.random_range(1..size - 1);
                let cy = rng.random_range(1..size - 1);
                for (dx, dy) in [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)] {
                    let x = (cx as isize + dx) as usize;
                    let y = (cy as isize + dy) as usize;
                    data[y * size + x] = STAR_BRIGHT;
                }
            }
            data
        }
    };

    if noise_sigma > 0.0 {
        let noise = Normal::new(0.0, noise_sigma).expect("finite sigma");
        for v in &mut data {
            *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    Ok(Image::from_parts(size, size, data))
}
