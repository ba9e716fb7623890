//! Color quantization: k-means palette in Lab space, hard guidance labels, and
//! the inter-cluster affinity kernel that turns hard statistics into soft ones.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CofError, Result};
use crate::image::{ColorImage, Image, Lab, LabImage};

pub const DEFAULT_K: usize = 32;
pub const DEFAULT_GRID_SPACING: usize = 10;
pub const DEFAULT_SEED: u64 = 42;
pub const MAX_CLUSTERS: usize = 256;

const MAX_LLOYD_ITERATIONS: usize = 50;
const CENTER_SHIFT_TOLERANCE: f64 = 1e-4;

/// Cluster centers in Lab space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PaletteRepr", into = "PaletteRepr")]
pub struct Palette {
    centers: Vec<Lab>,
    requested_k: usize,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PaletteRepr {
    k: usize,
    #[serde(default)]
    requested_k: Option<usize>,
    seed: u64,
    centers: Vec<Lab>,
}

impl TryFrom<PaletteRepr> for Palette {
    type Error = CofError;

    fn try_from(repr: PaletteRepr) -> Result<Self> {
        if repr.k != repr.centers.len() {
            return Err(CofError::param(
                "k",
                format!("k = {} but {} centers listed", repr.k, repr.centers.len()),
            ));
        }
        let mut palette = Palette::new(repr.centers)?;
        palette.seed = repr.seed;
        palette.requested_k = repr.requested_k.unwrap_or(repr.k);
        Ok(palette)
    }
}

impl From<Palette> for PaletteRepr {
    fn from(p: Palette) -> Self {
        PaletteRepr {
            k: p.centers.len(),
            requested_k: Some(p.requested_k),
            seed: p.seed,
            centers: p.centers,
        }
    }
}

impl Palette {
    pub fn new(centers: Vec<Lab>) -> Result<Self> {
        if centers.is_empty() || centers.len() > MAX_CLUSTERS {
            return Err(CofError::param(
                "k",
                format!("palette size {} outside 1..={MAX_CLUSTERS}", centers.len()),
            ));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(CofError::param("centers", "non-finite center"));
        }
        let k = centers.len();
        Ok(Self {
            centers,
            requested_k: k,
            seed: DEFAULT_SEED,
        })
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    /// The `k` that was asked for; larger than [`Palette::k`] when the image
    /// had too few distinct colors.
    pub fn requested_k(&self) -> usize {
        self.requested_k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn centers(&self) -> &[Lab] {
        &self.centers
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("palette serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| CofError::MalformedDump(e.to_string()))
    }

    /// Index of the nearest center; ties go to the lowest index.
    #[inline]
    pub fn nearest(&self, color: &Lab) -> usize {
        nearest_center(&self.centers, color).0
    }
}

#[inline]
fn nearest_center(centers: &[Lab], color: &Lab) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = c.dist_sq(color);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    (best, best_d)
}

/// Per-pixel hard cluster assignment `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceImage {
    labels: Image<u16>,
    k: usize,
}

impl GuidanceImage {
    pub fn new(width: usize, height: usize, labels: Vec<u16>, k: usize) -> Result<Self> {
        if labels.len() != width * height {
            return Err(CofError::InvalidImage(format!(
                "{} labels for a {width}x{height} guidance image",
                labels.len()
            )));
        }
        if k == 0 || k > MAX_CLUSTERS {
            return Err(CofError::param("k", format!("{k} outside 1..={MAX_CLUSTERS}")));
        }
        if let Some(&bad) = labels.iter().find(|&&l| usize::from(l) >= k) {
            return Err(CofError::InvalidImage(format!("label {bad} >= k = {k}")));
        }
        Ok(Self {
            labels: Image::from_parts(width, height, labels),
            k,
        })
    }

    /// Gray levels as labels (`k = 256`), the unquantized gray path.
    pub fn from_levels(width: usize, height: usize, levels: &[u8]) -> Result<Self> {
        Self::new(width, height, levels.iter().map(|&l| u16::from(l)).collect(), 256)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn width(&self) -> usize {
        self.labels.width()
    }

    pub fn height(&self) -> usize {
        self.labels.height()
    }

    pub fn dimensions(&self) -> (usize, usize) {
        self.labels.dimensions()
    }

    pub fn labels(&self) -> &[u16] {
        self.labels.pixels()
    }

    #[inline]
    pub fn label(&self, x: usize, y: usize) -> usize {
        usize::from(self.labels.get(x, y))
    }
}

/// Outcome of a k-means run, including the per-iteration objective.
#[derive(Debug, Clone)]
pub struct KmeansReport {
    pub palette: Palette,
    /// Sum of squared sample-to-center distances after each assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn kmeans_palette(img: &LabImage, k: usize, grid_spacing: usize, seed: u64) -> Result<Palette> {
    kmeans_with_report(img, k, grid_spacing, seed).map(|r| r.palette)
}

/// k-means++ seeding on grid-subsampled pixels followed by Lloyd iterations.
pub fn kmeans_with_report(
    img: &LabImage,
    k: usize,
    grid_spacing: usize,
    seed: u64,
) -> Result<KmeansReport> {
    if k == 0 || k > MAX_CLUSTERS {
        return Err(CofError::param("k", format!("{k} outside 1..={MAX_CLUSTERS}")));
    }
    if grid_spacing == 0 {
        return Err(CofError::param("grid_spacing", "must be at least 1"));
    }
    if img.is_empty() {
        return Err(CofError::InvalidImage("empty image".into()));
    }

    let samples: Vec<Lab> = (0..img.height())
        .step_by(grid_spacing)
        .flat_map(|y| (0..img.width()).step_by(grid_spacing).map(move |x| (x, y)))
        .map(|(x, y)| img.get(x, y))
        .collect();

    let distinct = samples
        .iter()
        .map(|c| [c.l.to_bits(), c.a.to_bits(), c.b.to_bits()])
        .collect::<HashSet<_>>()
        .len();
    let effective_k = k.min(distinct);
    if effective_k < k {
        log::warn!("only {distinct} distinct grid samples; reducing k from {k} to {effective_k}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_plus_plus(&samples, effective_k, &mut rng);

    let mut assignment = vec![0usize; samples.len()];
    let mut dists = vec![0.0f64; samples.len()];
    let mut objective = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_LLOYD_ITERATIONS {
        iterations += 1;
        samples
            .par_iter()
            .zip(assignment.par_iter_mut().zip(dists.par_iter_mut()))
            .for_each(|(s, (a, d))| {
                let (idx, dist) = nearest_center(&centers, s);
                *a = idx;
                *d = dist;
            });
        objective.push(dists.iter().sum());

        let mut sums = vec![[0.0f64; 3]; effective_k];
        let mut counts = vec![0usize; effective_k];
        for (s, &a) in samples.iter().zip(&assignment) {
            sums[a][0] += s.l;
            sums[a][1] += s.a;
            sums[a][2] += s.b;
            counts[a] += 1;
        }

        let mut next: Vec<Lab> = sums
            .iter()
            .zip(&counts)
            .zip(&centers)
            .map(|((sum, &n), old)| {
                if n == 0 {
                    *old
                } else {
                    let n = n as f64;
                    Lab::new(sum[0] / n, sum[1] / n, sum[2] / n)
                }
            })
            .collect();

        // Empty clusters take over the samples farthest from their centers.
        let mut taken = HashSet::new();
        for c in (0..effective_k).filter(|&c| counts[c] == 0) {
            let far = (0..samples.len())
                .filter(|i| !taken.contains(i))
                .fold(None::<usize>, |best, i| match best {
                    Some(b) if dists[b] >= dists[i] => Some(b),
                    _ => Some(i),
                });
            if let Some(i) = far {
                taken.insert(i);
                next[c] = samples[i];
                dists[i] = 0.0;
            }
        }

        let shift = centers
            .iter()
            .zip(&next)
            .map(|(a, b)| a.dist_sq(b).sqrt())
            .fold(0.0, f64::max);
        centers = next;
        if shift < CENTER_SHIFT_TOLERANCE {
            converged = true;
            break;
        }
    }

    let palette = Palette {
        centers,
        requested_k: k,
        seed,
    };
    Ok(KmeansReport {
        palette,
        objective,
        iterations,
        converged,
    })
}

fn seed_plus_plus(samples: &[Lab], k: usize, rng: &mut ChaCha8Rng) -> Vec<Lab> {
    let mut centers = Vec::with_capacity(k);
    centers.push(samples[rng.random_range(0..samples.len())]);
    let mut d2: Vec<f64> = samples.iter().map(|s| s.dist_sq(&centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            acc += d;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        // `k` never exceeds the number of distinct samples, so some d2 > 0.
        let chosen = samples[pick.expect("a sample away from every center")];
        for (d, s) in d2.iter_mut().zip(samples) {
            *d = d.min(s.dist_sq(&chosen));
        }
        centers.push(chosen);
    }
    centers
}

pub fn assign_hard(img: &LabImage, palette: &Palette) -> GuidanceImage {
    let labels: Vec<u16> = img
        .pixels()
        .par_iter()
        .map(|c| palette.nearest(c) as u16)
        .collect();
    GuidanceImage {
        labels: Image::from_parts(img.width(), img.height(), labels),
        k: palette.k(),
    }
}

/// Row-stochastic Gaussian affinity between cluster centers.
///
/// Row `a` is the soft membership of a pixel whose hard label is `a`:
/// `K(a, b) = exp(-|c_a - c_b|^2 / 2 sigma_r^2) / Z_a`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    k: usize,
    values: Vec<f64>,
    sigma_r: f64,
}

impl AffinityMatrix {
    pub fn identity(k: usize) -> Self {
        let mut values = vec![0.0; k * k];
        for a in 0..k {
            values[a * k + a] = 1.0;
        }
        Self {
            k,
            values,
            sigma_r: 0.0,
        }
    }

    /// Wraps arbitrary row-major values. Rows are not renormalized.
    pub fn from_values(k: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != k * k {
            return Err(CofError::dims((k, k), (values.len(), 1)));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(CofError::param("affinity", "entries must be finite and >= 0"));
        }
        Ok(Self {
            k,
            values,
            sigma_r: f64::NAN,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sigma_r(&self) -> f64 {
        self.sigma_r
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.k + b]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `sigma_r == 0` gives the identity (hard assignment).
pub fn cluster_affinity(palette: &Palette, sigma_r: f64) -> Result<AffinityMatrix> {
    if !(sigma_r.is_finite() || sigma_r == f64::INFINITY) || sigma_r < 0.0 {
        return Err(CofError::param("sigma_r", format!("{sigma_r} must be >= 0")));
    }
    let k = palette.k();
    if sigma_r == 0.0 {
        return Ok(AffinityMatrix::identity(k));
    }
    let centers = palette.centers();
    let denom = 2.0 * sigma_r * sigma_r;
    let mut values = vec![0.0; k * k];
    for (a, row) in values.chunks_mut(k).enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            *v = (-centers[a].dist_sq(&centers[b]) / denom).exp();
        }
        // The diagonal term is exp(0) = 1, so z >= 1.
        let z: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= z);
    }
    Ok(AffinityMatrix { k, values, sigma_r })
}

/// Mean distance from each center to its nearest other center.
pub fn default_sigma_r(palette: &Palette) -> Result<f64> {
    let centers = palette.centers();
    if centers.len() < 2 {
        return Err(CofError::param(
            "k",
            "need at least two clusters to derive sigma_r",
        ));
    }
    let total: f64 = centers
        .iter()
        .enumerate()
        .map(|(i, c)| {
            centers
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, o)| c.dist_sq(o))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    Ok(total / centers.len() as f64)
}

/// Renders each pixel with the mean RGB color of its cluster.
pub fn cluster_mean_image(img: &ColorImage, guide: &GuidanceImage) -> Result<ColorImage> {
    if img.dimensions() != guide.dimensions() {
        return Err(CofError::dims(img.dimensions(), guide.dimensions()));
    }
    let mut sums = vec![[0.0f64; 3]; guide.k()];
    let mut counts = vec![0usize; guide.k()];
    for (p, &l) in img.pixels().iter().zip(guide.labels()) {
        let l = usize::from(l);
        for c in 0..3 {
            sums[l][c] += p[c];
        }
        counts[l] += 1;
    }
    let means: Vec<[f64; 3]> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| if n == 0 { [0.0; 3] } else { s.map(|v| v / n as f64) })
        .collect();
    Ok(Image::from_parts(
        img.width(),
        img.height(),
        guide.labels().iter().map(|&l| means[usize::from(l)]).collect(),
    ))
}
