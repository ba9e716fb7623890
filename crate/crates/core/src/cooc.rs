//! Co-occurrence statistics and their PMI normalization.
//!
//! `C(a, b)` accumulates `exp(-d(p, q)^2 / 2 sigma^2)` over every ordered pixel
//! pair `(p, q)` whose Chebyshev distance is at most `window`, with `p` labelled
//! `a` and `q` labelled `b`. The self pair `p = q` counts with weight 1, so
//! `sigma = 0` leaves exactly the histogram on the diagonal. Windows are
//! truncated at the image border.
//!
//! The filter consumes the normalized matrix
//! `M(a, b) = C^(a, b) / (h^(a) h^(b) + epsilon)` where `C^` and `h^` are `C`
//! and `h` scaled to unit mass.

use base64::Engine as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CofError, Result};
use crate::image::{GrayImage, Image, LabImage};
use crate::quantize::{cluster_affinity, AffinityMatrix, GuidanceImage, Palette};

pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Rows per accumulation band. Fixed so that results do not depend on the
/// number of worker threads.
const BAND_ROWS: usize = 32;

/// Per-pixel inclusion flags restricting where statistics are collected.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    flags: Image<bool>,
}

impl RegionMask {
    pub fn new(width: usize, height: usize, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != width * height {
            return Err(CofError::InvalidImage(format!(
                "{} mask flags for {width}x{height}",
                flags.len()
            )));
        }
        Ok(Self {
            flags: Image::from_parts(width, height, flags),
        })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            flags: Image::filled(width, height, true),
        }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            flags: Image::filled(width, height, false),
        }
    }

    /// Pixels with `x0 <= x < x1` and `y0 <= y < y1`.
    pub fn rect(width: usize, height: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        let flags = (0..height)
            .flat_map(|y| (0..width).map(move |x| x >= x0 && x < x1 && y >= y0 && y < y1))
            .collect();
        Self {
            flags: Image::from_parts(width, height, flags),
        }
    }

    pub fn width(&self) -> usize {
        self.flags.width()
    }

    pub fn height(&self) -> usize {
        self.flags.height()
    }

    pub fn dimensions(&self) -> (usize, usize) {
        self.flags.dimensions()
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.flags.get(x, y)
    }

    pub fn flags(&self) -> &[bool] {
        self.flags.pixels()
    }

    pub fn count(&self) -> usize {
        self.flags().iter().filter(|&&f| f).count()
    }

    pub fn complement(&self) -> Self {
        Self {
            flags: self.flags.map(|&f| !f),
        }
    }

    /// Converts to a 0/1 gray image.
    pub fn to_gray(&self) -> GrayImage {
        self.flags.map(|&f| if f { 1.0 } else { 0.0 })
    }
}

/// Dense symmetric co-occurrence weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CoocMatrix {
    dim: usize,
    values: Vec<f64>,
    sigma: f64,
    window: usize,
}

impl CoocMatrix {
    pub fn from_values(dim: usize, values: Vec<f64>, sigma: f64, window: usize) -> Result<Self> {
        check_square(dim, &values)?;
        Ok(Self {
            dim,
            values,
            sigma,
            window,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn window(&self) -> usize {
        self.window
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.dim + b]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn is_symmetric(&self) -> bool {
        is_symmetric(self.dim, &self.values)
    }
}

/// Pixel counts (or soft masses) per value.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    values: Vec<f64>,
}

impl Histogram {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn get(&self, a: usize) -> f64 {
        self.values[a]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Normalized co-occurrence matrix used as the filter's range weight.
///
/// Stored as a shape plus a positive scale factor. The filters only depend on
/// the shape, so [`PmiMatrix::scaled`] never changes a filter's output.
#[derive(Debug, Clone, PartialEq)]
pub struct PmiMatrix {
    dim: usize,
    values: Vec<f64>,
    scale: f64,
    epsilon: f64,
    sigma: f64,
    window: usize,
}

impl PmiMatrix {
    /// Wraps explicit entries, e.g. a hand-built band-diagonal matrix.
    pub fn from_values(dim: usize, values: Vec<f64>) -> Result<Self> {
        check_square(dim, &values)?;
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(CofError::param("M", "entries must be finite and >= 0"));
        }
        Ok(Self {
            dim,
            values,
            scale: 1.0,
            epsilon: 0.0,
            sigma: f64::NAN,
            window: 0,
        })
    }

    pub fn all_ones(dim: usize) -> Self {
        Self::from_values(dim, vec![1.0; dim * dim]).expect("valid")
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let dim = diag.len();
        let mut values = vec![0.0; dim * dim];
        for (a, &d) in diag.iter().enumerate() {
            values[a * dim + a] = d;
        }
        Self::from_values(dim, values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_values(dim, vec![0.0; dim * dim]).expect("valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Entry including the scale factor.
    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.scale * self.values[a * self.dim + b]
    }

    /// Entries without the scale factor, row-major.
    pub fn shape(&self) -> &[f64] {
        &self.values
    }

    /// All entries with the scale applied, row-major.
    pub fn to_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v * self.scale).collect()
    }

    /// The same matrix multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(CofError::param("factor", format!("{factor} must be > 0")));
        }
        Ok(Self {
            scale: self.scale * factor,
            ..self.clone()
        })
    }

    pub fn is_symmetric(&self) -> bool {
        is_symmetric(self.dim, &self.values)
    }
}

fn check_square(dim: usize, values: &[f64]) -> Result<()> {
    if values.len() != dim * dim {
        return Err(CofError::DimensionMismatch {
            expected: format!("{dim}x{dim} = {} entries", dim * dim),
            actual: format!("{} entries", values.len()),
        });
    }
    Ok(())
}

fn is_symmetric(dim: usize, values: &[f64]) -> bool {
    (0..dim).all(|a| (0..a).all(|b| values[a * dim + b] == values[b * dim + a]))
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(CofError::param("sigma", format!("{sigma} must be >= 0")));
    }
    Ok(())
}

/// Collects over the 0-255 level view of a gray image (`dim = 256`).
pub fn collect_gray(
    img: &GrayImage,
    sigma: f64,
    window: usize,
    mask: Option<&RegionMask>,
) -> Result<(CoocMatrix, Histogram)> {
    let levels: Vec<u16> = img.levels().into_iter().map(u16::from).collect();
    collect_labels(&levels, img.dimensions(), 256, sigma, window, mask)
}

/// Collects over cluster labels (`dim = k`).
pub fn collect_hard(
    guide: &GuidanceImage,
    sigma: f64,
    window: usize,
    mask: Option<&RegionMask>,
) -> Result<(CoocMatrix, Histogram)> {
    collect_labels(
        guide.labels(),
        guide.dimensions(),
        guide.k(),
        sigma,
        window,
        mask,
    )
}

/// Forward half of the window: offsets `(dx, dy)` with `dy > 0`, or `dy == 0`
/// and `dx > 0`, paired with their spatial weight.
fn half_window(sigma: f64, window: usize) -> Vec<(isize, usize, f64)> {
    if sigma == 0.0 {
        return Vec::new();
    }
    let w = window as isize;
    let denom = 2.0 * sigma * sigma;
    let mut offsets = Vec::new();
    for dy in 0..=w {
        for dx in -w..=w {
            if dy == 0 && dx <= 0 {
                continue;
            }
            let d2 = (dx * dx + dy * dy) as f64;
            offsets.push((dx, dy as usize, (-d2 / denom).exp()));
        }
    }
    offsets
}

fn collect_labels(
    labels: &[u16],
    (width, height): (usize, usize),
    dim: usize,
    sigma: f64,
    window: usize,
    mask: Option<&RegionMask>,
) -> Result<(CoocMatrix, Histogram)> {
    check_sigma(sigma)?;
    if let Some(m) = mask {
        if m.dimensions() != (width, height) {
            return Err(CofError::dims((width, height), m.dimensions()));
        }
    }
    let flags = mask.map(|m| m.flags());
    let included = |i: usize| flags.is_none_or(|f| f[i]);
    let offsets = half_window(sigma, window);

    // Each band accumulates forward pairs whose first pixel lies in its rows.
    let bands: Vec<(Vec<f64>, Vec<f64>)> = (0..height.div_ceil(BAND_ROWS))
        .into_par_iter()
        .map(|band| {
            let mut forward = vec![0.0f64; dim * dim];
            let mut hist = vec![0.0f64; dim];
            let y_end = ((band + 1) * BAND_ROWS).min(height);
            for y in band * BAND_ROWS..y_end {
                let row = y * width;
                for x in 0..width {
                    if included(row + x) {
                        hist[usize::from(labels[row + x])] += 1.0;
                    }
                }
                for &(dx, dy, g) in &offsets {
                    let qy = y + dy;
                    if qy >= height {
                        continue;
                    }
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (width as isize - dx.max(0)).max(0) as usize;
                    let qrow = qy * width;
                    for x in x_lo..x_hi {
                        let p = row + x;
                        let q = (qrow + x).wrapping_add_signed(dx);
                        if included(p) && included(q) {
                            let a = usize::from(labels[p]);
                            let b = usize::from(labels[q]);
                            forward[a * dim + b] += g;
                        }
                    }
                }
            }
            (forward, hist)
        })
        .collect();

    let mut forward = vec![0.0f64; dim * dim];
    let mut hist = vec![0.0f64; dim];
    for (f, h) in &bands {
        forward.iter_mut().zip(f).for_each(|(acc, v)| *acc += v);
        hist.iter_mut().zip(h).for_each(|(acc, v)| *acc += v);
    }

    // Ordered pairs: C(a, b) = F(a, b) + F(b, a), plus the self pairs.
    let mut values = vec![0.0f64; dim * dim];
    for a in 0..dim {
        values[a * dim + a] = 2.0 * forward[a * dim + a] + hist[a];
        for b in 0..a {
            let v = forward[a * dim + b] + forward[b * dim + a];
            values[a * dim + b] = v;
            values[b * dim + a] = v;
        }
    }

    Ok((
        CoocMatrix {
            dim,
            values,
            sigma,
            window,
        },
        Histogram::new(hist),
    ))
}

/// Soft co-occurrence from hard counts.
///
/// With `K` row-stochastic and row `k` holding the membership of a pixel
/// hard-labelled `k`, `C_soft(a, b) = sum_{k1, k2} K(k1, a) K(k2, b) C_hard(k1, k2)`,
/// i.e. `K^T C_hard K`. Total mass is preserved. O(k^3).
pub fn hard_to_soft(c_hard: &CoocMatrix, affinity: &AffinityMatrix) -> Result<CoocMatrix> {
    let k = c_hard.dim();
    if affinity.k() != k {
        return Err(CofError::dims((k, k), (affinity.k(), affinity.k())));
    }
    // t = K^T C
    let mut t = vec![0.0f64; k * k];
    for k1 in 0..k {
        for a in 0..k {
            let w = affinity.get(k1, a);
            if w == 0.0 {
                continue;
            }
            let crow = &c_hard.values[k1 * k..(k1 + 1) * k];
            let trow = &mut t[a * k..(a + 1) * k];
            for (tv, cv) in trow.iter_mut().zip(crow) {
                *tv += w * cv;
            }
        }
    }
    let mut values = vec![0.0f64; k * k];
    for a in 0..k {
        for b in a..k {
            let v: f64 = (0..k).map(|k2| t[a * k + k2] * affinity.get(k2, b)).sum();
            values[a * k + b] = v;
            values[b * k + a] = v;
        }
    }
    Ok(CoocMatrix {
        dim: k,
        values,
        sigma: c_hard.sigma,
        window: c_hard.window,
    })
}

/// Soft histogram `h_soft(a) = sum_k h(k) K(k, a)`, matching [`hard_to_soft`].
pub fn soft_histogram(h: &Histogram, affinity: &AffinityMatrix) -> Result<Histogram> {
    let k = h.dim();
    if affinity.k() != k {
        return Err(CofError::dims((k, 1), (affinity.k(), 1)));
    }
    let values = (0..k)
        .map(|a| (0..k).map(|kk| h.get(kk) * affinity.get(kk, a)).sum())
        .collect();
    Ok(Histogram::new(values))
}

/// Cluster membership model used by [`brute_soft`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoftModel {
    /// Membership from the pixel's hard cluster center, `K(T_p, a)`.
    Approximate,
    /// Membership from the pixel's own Lab value, normalized over clusters.
    Exact,
}

/// Direct evaluation of the soft co-occurrence sum over all pixel pairs.
///
/// Costs O(n r^2 k^2); intended as a reference on small inputs.
pub fn brute_soft(
    img: &LabImage,
    guide: &GuidanceImage,
    palette: &Palette,
    sigma_r: f64,
    sigma: f64,
    window: usize,
    model: SoftModel,
) -> Result<CoocMatrix> {
    check_sigma(sigma)?;
    img.ensure_same_dims_as(guide)?;
    let k = palette.k();
    if guide.k() != k {
        return Err(CofError::dims((k, k), (guide.k(), guide.k())));
    }
    let (w, h) = img.dimensions();

    let membership: Vec<Vec<f64>> = match model {
        SoftModel::Approximate => {
            let kern = cluster_affinity(palette, sigma_r)?;
            guide
                .labels()
                .iter()
                .map(|&l| (0..k).map(|a| kern.get(usize::from(l), a)).collect())
                .collect()
        }
        SoftModel::Exact => img
            .pixels()
            .iter()
            .zip(guide.labels())
            .map(|(c, &l)| {
                if sigma_r == 0.0 {
                    (0..k).map(|a| if a == usize::from(l) { 1.0 } else { 0.0 }).collect()
                } else {
                    let raw: Vec<f64> = palette
                        .centers()
                        .iter()
                        .map(|z| (-z.dist_sq(c) / (2.0 * sigma_r * sigma_r)).exp())
                        .collect();
                    let z: f64 = raw.iter().sum();
                    raw.iter().map(|v| v / z).collect()
                }
            })
            .collect(),
    };

    let r = window as isize;
    let mut values = vec![0.0f64; k * k];
    for py in 0..h as isize {
        for px in 0..w as isize {
            let pr = &membership[(py as usize) * w + px as usize];
            for qy in (py - r).max(0)..=(py + r).min(h as isize - 1) {
                for qx in (px - r).max(0)..=(px + r).min(w as isize - 1) {
                    let d2 = ((px - qx).pow(2) + (py - qy).pow(2)) as f64;
                    let g = if d2 == 0.0 {
                        1.0
                    } else if sigma == 0.0 {
                        continue;
                    } else {
                        (-d2 / (2.0 * sigma * sigma)).exp()
                    };
                    let qr = &membership[(qy as usize) * w + qx as usize];
                    for a in 0..k {
                        for b in 0..k {
                            values[a * k + b] += g * pr[a] * qr[b];
                        }
                    }
                }
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            let v = 0.5 * (values[a * k + b] + values[b * k + a]);
            values[a * k + b] = v;
            values[b * k + a] = v;
        }
    }
    Ok(CoocMatrix {
        dim: k,
        values,
        sigma,
        window,
    })
}

/// `M(a, b) = C^(a, b) / (h^(a) h^(b) + epsilon)` with `C^`, `h^` normalized
/// to unit mass.
pub fn normalize_pmi(c: &CoocMatrix, h: &Histogram, epsilon: f64) -> Result<PmiMatrix> {
    let dim = c.dim();
    if h.dim() != dim {
        return Err(CofError::dims((dim, 1), (h.dim(), 1)));
    }
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(CofError::param("epsilon", format!("{epsilon} must be >= 0")));
    }
    let c_total = c.total();
    let h_total = h.total();
    if c_total <= 0.0 || h_total <= 0.0 {
        return Err(CofError::EmptyStatistics);
    }
    let hn: Vec<f64> = h.values().iter().map(|v| v / h_total).collect();
    let mut values = vec![0.0f64; dim * dim];
    for a in 0..dim {
        for b in 0..dim {
            let num = c.get(a, b) / c_total;
            if num == 0.0 {
                continue;
            }
            values[a * dim + b] = num / (hn[a] * hn[b] + epsilon);
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CofError::param(
            "epsilon",
            "zero-frequency value with nonzero co-occurrence; use epsilon > 0",
        ));
    }
    Ok(PmiMatrix {
        dim,
        values,
        scale: 1.0,
        epsilon,
        sigma: c.sigma(),
        window: c.window(),
    })
}

trait SameDims {
    fn ensure_same_dims_as(&self, guide: &GuidanceImage) -> Result<()>;
}

impl<P> SameDims for Image<P> {
    fn ensure_same_dims_as(&self, guide: &GuidanceImage) -> Result<()> {
        if self.dimensions() != guide.dimensions() {
            return Err(CofError::dims(self.dimensions(), guide.dimensions()));
        }
        Ok(())
    }
}

/// Serialized PMI matrix: a JSON header plus base64 little-endian `f64`
/// values, optionally carrying the palette that produced its labels so the
/// matrix can be applied to another image.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixDump {
    pub matrix: PmiMatrix,
    pub palette: Option<Palette>,
    pub sigma_r: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DumpRepr {
    format: String,
    version: u32,
    dim: usize,
    sigma: Option<f64>,
    window: usize,
    epsilon: f64,
    #[serde(default)]
    sigma_r: Option<f64>,
    values: String,
    #[serde(default)]
    palette: Option<Palette>,
}

const DUMP_FORMAT: &str = "cofkit-pmi";

impl MatrixDump {
    pub fn new(matrix: PmiMatrix) -> Self {
        Self {
            matrix,
            palette: None,
            sigma_r: None,
        }
    }

    pub fn to_json(&self) -> String {
        let m = &self.matrix;
        let bytes: Vec<u8> = m.to_values().iter().flat_map(|v| v.to_le_bytes()).collect();
        let repr = DumpRepr {
            format: DUMP_FORMAT.into(),
            version: 1,
            dim: m.dim,
            sigma: m.sigma.is_finite().then_some(m.sigma),
            window: m.window,
            epsilon: m.epsilon,
            sigma_r: self.sigma_r,
            values: base64::engine::general_purpose::STANDARD.encode(bytes),
            palette: self.palette.clone(),
        };
        serde_json::to_string_pretty(&repr).expect("dump serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let repr: DumpRepr =
            serde_json::from_str(s).map_err(|e| CofError::MalformedDump(e.to_string()))?;
        if repr.format != DUMP_FORMAT || repr.version != 1 {
            return Err(CofError::MalformedDump(format!(
                "unsupported format {} v{}",
                repr.format, repr.version
            )));
        }
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(repr.values)
            .map_err(|e| CofError::MalformedDump(e.to_string()))?;
        if bytes.len() != repr.dim * repr.dim * 8 {
            return Err(CofError::MalformedDump(format!(
                "{} value bytes for dim {}",
                bytes.len(),
                repr.dim
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut matrix = PmiMatrix::from_values(repr.dim, values)
            .map_err(|e| CofError::MalformedDump(e.to_string()))?;
        matrix.epsilon = repr.epsilon;
        matrix.sigma = repr.sigma.unwrap_or(f64::NAN);
        matrix.window = repr.window;
        if let Some(p) = &repr.palette {
            if p.k() != repr.dim {
                return Err(CofError::MalformedDump(format!(
                    "palette has {} clusters, matrix dim {}",
                    p.k(),
                    repr.dim
                )));
            }
        }
        Ok(Self {
            matrix,
            palette: repr.palette,
            sigma_r: repr.sigma_r,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Lab;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_guide(w: usize, h: usize, k: usize, seed: u64) -> GuidanceImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels = (0..w * h).map(|_| rng.random_range(0..k as u16)).collect();
        GuidanceImage::new(w, h, labels, k).unwrap()
    }

    /// Straight enumeration of every ordered pair in the window.
    fn naive_cooc(guide: &GuidanceImage, sigma: f64, window: usize, mask: Option<&RegionMask>) -> Vec<f64> {
        let (w, h) = guide.dimensions();
        let k = guide.k();
        let mut c = vec![0.0; k * k];
        for py in 0..h {
            for px in 0..w {
                for qy in 0..h {
                    for qx in 0..w {
                        let cheb = px.abs_diff(qx).max(py.abs_diff(qy));
                        if cheb > window {
                            continue;
                        }
                        if let Some(m) = mask {
                            if !m.contains(px, py) || !m.contains(qx, qy) {
                                continue;
                            }
                        }
                        let d2 = (px.abs_diff(qx).pow(2) + py.abs_diff(qy).pow(2)) as f64;
                        let g = if d2 == 0.0 {
                            1.0
                        } else if sigma == 0.0 {
                            0.0
                        } else {
                            (-d2 / (2.0 * sigma * sigma)).exp()
                        };
                        c[guide.label(px, py) * k + guide.label(qx, qy)] += g;
                    }
                }
            }
        }
        c
    }

    #[test]
    fn constant_image_single_entry() {
        let img = GrayImage::from_levels(3, 3, &[7; 9]).unwrap();
        let (c, h) = collect_gray(&img, 2.0, 3, None).unwrap();
        assert_eq!(h.get(7), 9.0);
        for a in 0..256 {
            for b in 0..256 {
                if (a, b) != (7, 7) {
                    assert_eq!(c.get(a, b), 0.0);
                }
            }
        }
        assert!(c.get(7, 7) > 9.0);
    }

    #[test]
    fn two_pixel_hand_evaluation() {
        let img = GrayImage::from_levels(2, 1, &[0, 255]).unwrap();
        let (c, _) = collect_gray(&img, 1.0, 1, None).unwrap();
        assert_eq!(c.get(0, 0), 1.0);
        assert_eq!(c.get(255, 255), 1.0);
        assert_abs_diff_eq!(c.get(0, 255), (-0.5f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(c.get(255, 0), (-0.5f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn zero_sigma_is_histogram_diagonal() {
        let guide = random_guide(9, 7, 5, 3);
        let (c, h) = collect_hard(&guide, 0.0, 4, None).unwrap();
        for a in 0..5 {
            for b in 0..5 {
                let expected = if a == b { h.get(a) } else { 0.0 };
                assert_eq!(c.get(a, b), expected);
            }
        }
        assert_eq!(h.total(), 63.0);
    }

    #[test]
    fn single_label_single_entry() {
        let guide = GuidanceImage::new(4, 4, vec![2; 16], 3).unwrap();
        let (c, h) = collect_hard(&guide, 1.5, 2, None).unwrap();
        assert_eq!(h.values(), &[0.0, 0.0, 16.0]);
        assert!(c.get(2, 2) > 0.0);
        assert_eq!(c.total(), c.get(2, 2));
    }

    #[test]
    fn full_mask_is_neutral() {
        let guide = random_guide(12, 10, 4, 8);
        let full = RegionMask::full(12, 10);
        assert_eq!(
            collect_hard(&guide, 2.0, 3, None).unwrap(),
            collect_hard(&guide, 2.0, 3, Some(&full)).unwrap()
        );
    }

    #[test]
    fn matches_naive_enumeration() {
        let guide = random_guide(8, 8, 3, 1);
        let (c, _) = collect_hard(&guide, 1.3, 2, None).unwrap();
        let naive = naive_cooc(&guide, 1.3, 2, None);
        for (a, b) in c.values().iter().zip(&naive) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn masked_matches_naive_enumeration() {
        let guide = random_guide(40, 37, 4, 2);
        let mask = RegionMask::rect(40, 37, 3, 5, 30, 33);
        let (c, h) = collect_hard(&guide, 2.5, 3, Some(&mask)).unwrap();
        let naive = naive_cooc(&guide, 2.5, 3, Some(&mask));
        for (a, b) in c.values().iter().zip(&naive) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        assert_eq!(h.total(), mask.count() as f64);
    }

    #[test]
    fn mask_dimension_mismatch() {
        let guide = random_guide(5, 5, 2, 0);
        let mask = RegionMask::full(4, 5);
        assert!(matches!(
            collect_hard(&guide, 1.0, 1, Some(&mask)),
            Err(CofError::DimensionMismatch { .. })
        ));
    }

    fn random_symmetric(k: usize, rng: &mut ChaCha8Rng) -> CoocMatrix {
        let mut v = vec![0.0; k * k];
        for a in 0..k {
            for b in 0..=a {
                let x = rng.random_range(0.0..10.0);
                v[a * k + b] = x;
                v[b * k + a] = x;
            }
        }
        CoocMatrix::from_values(k, v, 1.0, 1).unwrap()
    }

    fn random_stochastic(k: usize, rng: &mut ChaCha8Rng) -> AffinityMatrix {
        let mut v: Vec<f64> = (0..k * k).map(|_| rng.random_range(0.0..1.0)).collect();
        for row in v.chunks_mut(k) {
            let z: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= z);
        }
        AffinityMatrix::from_values(k, v).unwrap()
    }

    #[test]
    fn hard_to_soft_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = random_symmetric(5, &mut rng);
        let out = hard_to_soft(&c, &AffinityMatrix::identity(5)).unwrap();
        assert_eq!(out.values(), c.values());
    }

    #[test]
    fn hard_to_soft_four_index_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = 3;
        let c = random_symmetric(k, &mut rng);
        let kern = random_stochastic(k, &mut rng);
        let out = hard_to_soft(&c, &kern).unwrap();
        for a in 0..k {
            for b in 0..k {
                let mut s = 0.0;
                for k1 in 0..k {
                    for k2 in 0..k {
                        s += kern.get(k1, a) * kern.get(k2, b) * c.get(k1, k2);
                    }
                }
                assert_abs_diff_eq!(out.get(a, b), s, epsilon = 1e-12);
            }
        }
        assert!(out.is_symmetric());
        assert_abs_diff_eq!(out.total(), c.total(), epsilon = 1e-10);
    }

    #[test]
    fn hard_to_soft_dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = random_symmetric(3, &mut rng);
        assert!(hard_to_soft(&c, &AffinityMatrix::identity(4)).is_err());
    }

    #[test]
    fn soft_histogram_keeps_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let kern = random_stochastic(6, &mut rng);
        let h = Histogram::new((0..6).map(|i| (i * 7 % 5) as f64).collect());
        let soft = soft_histogram(&h, &kern).unwrap();
        assert_abs_diff_eq!(soft.total(), h.total(), epsilon = 1e-9);
    }

    fn palette_and_image(w: usize, h: usize, k: usize, seed: u64) -> (LabImage, GuidanceImage, Palette) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<Lab> = (0..k)
            .map(|_| Lab::new(rng.random_range(0.0..100.0), rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0)))
            .collect();
        let palette = Palette::new(centers).unwrap();
        let data = (0..w * h)
            .map(|_| Lab::new(rng.random_range(0.0..100.0), rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0)))
            .collect();
        let img = LabImage::from_lab(w, h, data).unwrap();
        let guide = crate::quantize::assign_hard(&img, &palette);
        (img, guide, palette)
    }

    #[test]
    fn brute_soft_hard_limit() {
        let (img, guide, palette) = palette_and_image(10, 9, 4, 1);
        let soft = brute_soft(&img, &guide, &palette, 0.0, 1.5, 2, SoftModel::Approximate).unwrap();
        let (hard, _) = collect_hard(&guide, 1.5, 2, None).unwrap();
        for (a, b) in soft.values().iter().zip(hard.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn brute_soft_agrees_with_factorized_form() {
        let (img, guide, palette) = palette_and_image(12, 12, 4, 2);
        let sigma_r = 30.0;
        let brute = brute_soft(&img, &guide, &palette, sigma_r, 2.0, 3, SoftModel::Approximate).unwrap();
        let (hard, _) = collect_hard(&guide, 2.0, 3, None).unwrap();
        let fast = hard_to_soft(&hard, &cluster_affinity(&palette, sigma_r).unwrap()).unwrap();
        let num: f64 = brute.values().iter().zip(fast.values()).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = brute.values().iter().map(|a| a * a).sum();
        assert!((num / den).sqrt() < 1e-10);
    }

    #[test]
    fn brute_soft_regression_fixture() {
        // Recorded from this oracle on a seeded 16x16 input with k = 4.
        let (img, guide, palette) = palette_and_image(16, 16, 4, 16);
        let c = brute_soft(&img, &guide, &palette, 25.0, 2.0, 3, SoftModel::Approximate).unwrap();
        let exact = brute_soft(&img, &guide, &palette, 25.0, 2.0, 3, SoftModel::Exact).unwrap();
        assert!(c.is_symmetric());
        assert!(exact.is_symmetric());
        assert_abs_diff_eq!(c.total(), exact.total(), epsilon = 1e-8 * c.total());
        let recorded = REGRESSION_16X16_K4;
        for (got, want) in c.values().iter().zip(recorded.iter()) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-9 * want.abs().max(1.0));
        }
    }

    const REGRESSION_16X16_K4: [f64; 16] = [
        101.43171781443378, 174.0856894129736, 177.46182518731064, 190.28636574242387,
        174.0856894129736, 399.7049754022318, 351.61050999733385, 380.5128857254316,
        177.46182518731064, 351.61050999733385, 357.9578284684112, 388.7544881500119,
        190.28636574242387, 380.5128857254316, 388.7544881500119, 425.71944486743666,
    ];

    #[test]
    fn pmi_limits() {
        let guide = random_guide(10, 10, 4, 12);
        let (c, h) = collect_hard(&guide, 0.0, 3, None).unwrap();
        let m = normalize_pmi(&c, &h, 0.0).unwrap();
        let n = h.total();
        for a in 0..4 {
            for b in 0..4 {
                if a == b {
                    assert_abs_diff_eq!(m.get(a, a), n / h.get(a), epsilon = 1e-9);
                } else {
                    assert_eq!(m.get(a, b), 0.0);
                }
            }
        }

        // Independent pairs: C(a, b) = h(a) h(b).
        let h = Histogram::new(vec![3.0, 1.0, 6.0]);
        let mut v = vec![0.0; 9];
        for a in 0..3 {
            for b in 0..3 {
                v[a * 3 + b] = h.get(a) * h.get(b);
            }
        }
        let c = CoocMatrix::from_values(3, v, f64::INFINITY, 1).unwrap();
        let m = normalize_pmi(&c, &h, 0.0).unwrap();
        for v in m.to_values() {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn pmi_two_level_hand_evaluation() {
        let c = CoocMatrix::from_values(2, vec![4.0, 1.0, 1.0, 0.0], 1.0, 1).unwrap();
        let h = Histogram::new(vec![3.0, 1.0]);
        let m = normalize_pmi(&c, &h, 0.0).unwrap();
        // C^ = [[4/6, 1/6], [1/6, 0]], h^ = [3/4, 1/4].
        assert_abs_diff_eq!(m.get(0, 0), (4.0 / 6.0) / (9.0 / 16.0), epsilon = 1e-12);
        assert_abs_diff_eq!(m.get(0, 1), (1.0 / 6.0) / (3.0 / 16.0), epsilon = 1e-12);
        assert_abs_diff_eq!(m.get(1, 0), (1.0 / 6.0) / (3.0 / 16.0), epsilon = 1e-12);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn pmi_rejects_empty_statistics() {
        let c = CoocMatrix::from_values(2, vec![0.0; 4], 1.0, 1).unwrap();
        let h = Histogram::new(vec![1.0, 1.0]);
        assert!(matches!(normalize_pmi(&c, &h, 1e-8), Err(CofError::EmptyStatistics)));
    }

    #[test]
    fn dump_round_trip() {
        let guide = random_guide(10, 10, 5, 3);
        let (c, h) = collect_hard(&guide, 1.0, 2, None).unwrap();
        let m = normalize_pmi(&c, &h, DEFAULT_EPSILON).unwrap();
        let palette = Palette::new((0..5).map(|i| Lab::new(i as f64 * 10.0, 0.0, 0.0)).collect()).unwrap();
        let dump = MatrixDump {
            matrix: m.clone(),
            palette: Some(palette),
            sigma_r: Some(4.0),
        };
        let back = MatrixDump::from_json(&dump.to_json()).unwrap();
        assert_eq!(back, dump);
        assert!(MatrixDump::from_json("{}").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn collected_matrices_are_symmetric(seed in 0u64..10_000, k in 1usize..7, window in 0usize..4, sigma in 0.0f64..4.0) {
            let guide = random_guide(19, 23, k, seed);
            let (c, h) = collect_hard(&guide, sigma, window, None).unwrap();
            prop_assert!(c.is_symmetric());
            prop_assert_eq!(h.total(), (19 * 23) as f64);
            let m = normalize_pmi(&c, &h, DEFAULT_EPSILON).unwrap();
            prop_assert!(m.is_symmetric());
            prop_assert!(m.shape().iter().all(|v| v.is_finite() && *v >= 0.0));
        }

        #[test]
        fn shrinking_mask_never_raises_counts(seed in 0u64..10_000, x0 in 0usize..8, y0 in 0usize..8) {
            let guide = random_guide(16, 16, 4, seed);
            let outer = RegionMask::rect(16, 16, x0, y0, 16, 16);
            let inner = RegionMask::rect(16, 16, x0 + 2, y0 + 3, 15, 14);
            let (_, ho) = collect_hard(&guide, 1.0, 1, Some(&outer)).unwrap();
            let (_, hi) = collect_hard(&guide, 1.0, 1, Some(&inner)).unwrap();
            for a in 0..4 {
                prop_assert!(hi.get(a) <= ho.get(a));
            }
        }
    }
}
