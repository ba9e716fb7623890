//! Foreground/background applications: selective smoothing, selective
//! desaturation and scribble-to-mask propagation.

use rayon::prelude::*;

use crate::color::luma;
use crate::cooc::{PmiMatrix, RegionMask};
use crate::error::{CofError, Result};
use crate::image::{ColorImage, Image, Sample};
use crate::quantize::GuidanceImage;

use super::{FilterParams, SpatialKernel};

pub const DEFAULT_MASK_THRESHOLD: f64 = 0.5;
pub const DEFAULT_SCRIBBLE_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[repr(u8)]
pub enum Stroke {
    #[default]
    Unmarked = 0,
    Foreground = 1,
    Background = 2,
}

impl TryFrom<u8> for Stroke {
    type Error = CofError;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Stroke::Unmarked),
            1 => Ok(Stroke::Foreground),
            2 => Ok(Stroke::Background),
            other => Err(CofError::param("stroke", format!("unknown stroke value {other}"))),
        }
    }
}

/// Tri-state user strokes over an image.
#[derive(Debug, Clone, PartialEq)]
pub struct ScribbleSet {
    marks: Image<Stroke>,
}

impl ScribbleSet {
    pub fn new(width: usize, height: usize, marks: Vec<Stroke>) -> Result<Self> {
        if marks.len() != width * height {
            return Err(CofError::InvalidImage(format!(
                "{} scribble marks for {width}x{height}",
                marks.len()
            )));
        }
        Ok(Self {
            marks: Image::from_parts(width, height, marks),
        })
    }

    pub fn blank(width: usize, height: usize) -> Self {
        Self {
            marks: Image::filled(width, height, Stroke::Unmarked),
        }
    }

    pub fn dimensions(&self) -> (usize, usize) {
        self.marks.dimensions()
    }

    pub fn marks(&self) -> &[Stroke] {
        self.marks.pixels()
    }

    pub fn get(&self, x: usize, y: usize) -> Stroke {
        self.marks.get(x, y)
    }

    pub fn set(&mut self, x: usize, y: usize, stroke: Stroke) {
        let i = self.marks.index(x, y);
        self.marks.pixels_mut()[i] = stroke;
    }

    pub fn count(&self, stroke: Stroke) -> usize {
        self.marks().iter().filter(|&&s| s == stroke).count()
    }
}

/// Foreground pixels keep their value, background pixels are averaged:
/// `J_p = sum G (M_F I_p + M_B I_q) / sum G (M_F + M_B)`.
///
/// `spatial = false` drops the spatial Gaussian and weighs the window
/// uniformly.
pub fn fb_cof<P: Sample>(
    img: &Image<P>,
    guide: &GuidanceImage,
    m_f: &PmiMatrix,
    m_b: &PmiMatrix,
    params: &FilterParams,
    spatial: bool,
) -> Result<Image<P>> {
    check_pair(img, guide, m_f, m_b)?;
    params.validate()?;
    let sigma_s = if spatial { params.sigma_s } else { f64::INFINITY };
    let kernel = SpatialKernel::new(params.window, sigma_s);
    let k = guide.k();
    let labels = guide.labels();
    let (fg, bg) = pair_weights(m_f, m_b);
    let src = img.pixels();
    let (width, height) = img.dimensions();
    let r = params.window;

    let mut out = vec![P::zero(); width * height];
    out.par_chunks_mut(width.max(1)).enumerate().for_each(|(y, row)| {
        for (x, dst) in row.iter_mut().enumerate() {
            let p = y * width + x;
            let lp = usize::from(labels[p]) * k;
            let mut alpha = 0.0;
            let mut beta = 0.0;
            let mut smooth = P::zero();
            for qy in y.saturating_sub(r)..=(y + r).min(height - 1) {
                for qx in x.saturating_sub(r)..=(x + r).min(width - 1) {
                    let q = qy * width + qx;
                    let g = kernel.at(qx as isize - x as isize, qy as isize - y as isize);
                    let lq = usize::from(labels[q]);
                    let wb = g * bg[lp + lq];
                    alpha += g * fg[lp + lq];
                    beta += wb;
                    smooth = src[q].weighted_add(wb, smooth);
                }
            }
            let den = alpha + beta;
            *dst = if den > 0.0 {
                src[p].weighted_add(alpha / den, smooth.scale(1.0 / den))
            } else {
                src[p]
            };
        }
    });
    Ok(Image::from_parts(width, height, out))
}

/// Keeps color where neighbors co-occur under `M_F` and fades to gray where
/// they co-occur under `M_B`: `J_p = (alpha I_p + beta gray(I_p)) / (alpha + beta)`
/// with `alpha`, `beta` the window sums of `M_F` and `M_B`.
pub fn selective_gray(
    img: &ColorImage,
    guide: &GuidanceImage,
    m_f: &PmiMatrix,
    m_b: &PmiMatrix,
    params: &FilterParams,
) -> Result<ColorImage> {
    check_pair(img, guide, m_f, m_b)?;
    let k = guide.k();
    let labels = guide.labels();
    let (fg, bg) = pair_weights(m_f, m_b);
    let src = img.pixels();
    let (width, height) = img.dimensions();
    let r = params.window;

    let mut out = vec![[0.0; 3]; width * height];
    out.par_chunks_mut(width.max(1)).enumerate().for_each(|(y, row)| {
        for (x, dst) in row.iter_mut().enumerate() {
            let p = y * width + x;
            let lp = usize::from(labels[p]) * k;
            let mut alpha = 0.0;
            let mut beta = 0.0;
            for qy in y.saturating_sub(r)..=(y + r).min(height - 1) {
                for qx in x.saturating_sub(r)..=(x + r).min(width - 1) {
                    let lq = usize::from(labels[qy * width + qx]);
                    alpha += fg[lp + lq];
                    beta += bg[lp + lq];
                }
            }
            let den = alpha + beta;
            *dst = if den > 0.0 {
                let gray = luma(src[p]);
                let (a, b) = (alpha / den, beta / den);
                src[p].map(|c| a * c + b * gray)
            } else {
                src[p]
            };
        }
    });
    Ok(Image::from_parts(width, height, out))
}

/// Grows foreground strokes into a mask.
///
/// Treats the guided filter weights `w(p, q) = G(p, q) M_T(T_p, T_q)` as a
/// graph and solves for the value `L` that equals its own weighted window
/// average at every unmarked pixel, with foreground strokes held at 1 and
/// background strokes at 0. `L_p` is the probability that a walk taking
/// filter-weighted steps from `p` reaches a foreground stroke before a
/// background one; one step of that walk from the stroke indicator is the
/// plain filtered indicator. Pixels with `L >= threshold` form the mask.
///
/// The linear system is solved by Jacobi-preconditioned conjugate gradients,
/// stopping after `max_iterations` or once the residual falls below
/// [`PROPAGATION_TOLERANCE`] relative to the right-hand side. Without
/// background strokes every pixel connected to a foreground stroke tends
/// to 1.
pub fn propagate_scribbles(
    scribbles: &ScribbleSet,
    guide: &GuidanceImage,
    m_t: &PmiMatrix,
    params: &FilterParams,
    threshold: f64,
    max_iterations: usize,
) -> Result<RegionMask> {
    if scribbles.dimensions() != guide.dimensions() {
        return Err(CofError::dims(guide.dimensions(), scribbles.dimensions()));
    }
    if m_t.dim() != guide.k() {
        return Err(CofError::dims((guide.k(), guide.k()), (m_t.dim(), m_t.dim())));
    }
    params.validate()?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CofError::param("threshold", format!("{threshold} outside [0, 1]")));
    }
    if scribbles.count(Stroke::Foreground) == 0 {
        return Err(CofError::EmptyScribbles);
    }
    let graph = StrokeGraph::new(scribbles, guide, m_t, params);
    let level = graph.solve(max_iterations);
    let flags = level
        .iter()
        .zip(scribbles.marks())
        .map(|(&v, &s)| match s {
            Stroke::Foreground => true,
            Stroke::Background => false,
            Stroke::Unmarked => v >= threshold,
        })
        .collect();
    RegionMask::new(scribbles.dimensions().0, scribbles.dimensions().1, flags)
}

pub const PROPAGATION_TOLERANCE: f64 = 1e-6;

/// Pulls pixels with no path to any stroke toward 0 and keeps the system
/// nonsingular.
const GROUNDING: f64 = 1e-9;

struct StrokeGraph<'a> {
    width: usize,
    height: usize,
    marks: &'a [Stroke],
    labels: &'a [u16],
    k: usize,
    /// Symmetrized matrix entries.
    affinity: Vec<f64>,
    kernel: SpatialKernel,
    /// Diagonal of the system for unmarked pixels, 1 elsewhere.
    diag: Vec<f64>,
    /// Weight each unmarked pixel gives to foreground strokes.
    rhs: Vec<f64>,
}

impl<'a> StrokeGraph<'a> {
    fn new(scribbles: &'a ScribbleSet, guide: &'a GuidanceImage, m_t: &PmiMatrix, params: &FilterParams) -> Self {
        let (width, height) = scribbles.dimensions();
        let k = guide.k();
        let shape = m_t.shape();
        let affinity = (0..k * k)
            .map(|i| 0.5 * (shape[i] + shape[(i % k) * k + i / k]))
            .collect();
        let mut graph = Self {
            width,
            height,
            marks: scribbles.marks(),
            labels: guide.labels(),
            k,
            affinity,
            kernel: SpatialKernel::new(params.window, params.sigma_s),
            diag: Vec::new(),
            rhs: Vec::new(),
        };
        let (diag, rhs): (Vec<f64>, Vec<f64>) = (0..width * height)
            .into_par_iter()
            .map(|p| {
                if graph.marks[p] != Stroke::Unmarked {
                    return (1.0, 0.0);
                }
                let (mut degree, mut fg) = (0.0, 0.0);
                graph.for_neighbors(p, |q, w| {
                    degree += w;
                    if graph.marks[q] == Stroke::Foreground {
                        fg += w;
                    }
                });
                if degree > 0.0 {
                    (degree * (1.0 + GROUNDING), fg)
                } else {
                    (1.0, 0.0)
                }
            })
            .unzip();
        graph.diag = diag;
        graph.rhs = rhs;
        graph
    }

    /// Calls `f(q, w(p, q))` for every window neighbor `q != p`.
    #[inline]
    fn for_neighbors(&self, p: usize, mut f: impl FnMut(usize, f64)) {
        let (w, h) = (self.width, self.height);
        let r = self.kernel.window();
        let (x, y) = (p % w, p / w);
        let row = usize::from(self.labels[p]) * self.k;
        for qy in y.saturating_sub(r)..=(y + r).min(h - 1) {
            for qx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                let q = qy * w + qx;
                if q != p {
                    let g = self.kernel.at(qx as isize - x as isize, qy as isize - y as isize);
                    f(q, g * self.affinity[row + usize::from(self.labels[q])]);
                }
            }
        }
    }

    /// `A v` restricted to unmarked pixels; marked entries of `v` are ignored.
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        out.par_chunks_mut(self.width).enumerate().for_each(|(y, row)| {
            for (x, o) in row.iter_mut().enumerate() {
                let p = y * self.width + x;
                if self.marks[p] != Stroke::Unmarked {
                    *o = 0.0;
                    continue;
                }
                let mut off = 0.0;
                self.for_neighbors(p, |q, w| {
                    if self.marks[q] == Stroke::Unmarked {
                        off += w * v[q];
                    }
                });
                *o = self.diag[p] * v[p] - off;
            }
        });
    }

    /// Values on all pixels: the solution on unmarked pixels, the stroke
    /// values elsewhere.
    fn solve(&self, max_iterations: usize) -> Vec<f64> {
        let n = self.width * self.height;
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut x = vec![0.0; n];
        let mut r = self.rhs.clone();
        let b_norm = dot(&r, &r).sqrt();
        if b_norm > 0.0 {
            let mut z: Vec<f64> = r.iter().zip(&self.diag).map(|(r, d)| r / d).collect();
            let mut dir = z.clone();
            let mut ad = vec![0.0; n];
            let mut rz = dot(&r, &z);
            for _ in 0..max_iterations {
                self.apply(&dir, &mut ad);
                let denom = dot(&dir, &ad);
                if denom <= 0.0 {
                    break;
                }
                let alpha = rz / denom;
                for i in 0..n {
                    x[i] += alpha * dir[i];
                    r[i] -= alpha * ad[i];
                }
                if dot(&r, &r).sqrt() <= PROPAGATION_TOLERANCE * b_norm {
                    break;
                }
                for i in 0..n {
                    z[i] = r[i] / self.diag[i];
                }
                let rz_next = dot(&r, &z);
                let beta = rz_next / rz;
                rz = rz_next;
                for i in 0..n {
                    dir[i] = z[i] + beta * dir[i];
                }
            }
        }
        for (v, s) in x.iter_mut().zip(self.marks) {
            match s {
                Stroke::Foreground => *v = 1.0,
                Stroke::Background => *v = 0.0,
                Stroke::Unmarked => {}
            }
        }
        x
    }
}

/// Entries of `M_F` and `M_B` on a common scale. Matrices sharing a scale
/// use their shapes directly, so scaling both by the same factor leaves the
/// output bit-identical.
fn pair_weights(m_f: &PmiMatrix, m_b: &PmiMatrix) -> (Vec<f64>, Vec<f64>) {
    if m_f.scale() == m_b.scale() {
        (m_f.shape().to_vec(), m_b.shape().to_vec())
    } else {
        let ratio = m_f.scale() / m_b.scale();
        (m_f.shape().iter().map(|v| v * ratio).collect(), m_b.shape().to_vec())
    }
}

fn check_pair<P>(img: &Image<P>, guide: &GuidanceImage, m_f: &PmiMatrix, m_b: &PmiMatrix) -> Result<()> {
    if img.dimensions() != guide.dimensions() {
        return Err(CofError::dims(img.dimensions(), guide.dimensions()));
    }
    for m in [m_f, m_b] {
        if m.dim() != guide.k() {
            return Err(CofError::dims((guide.k(), guide.k()), (m.dim(), m.dim())));
        }
    }
    Ok(())
}
