//! End-to-end guided filtering: quantize, collect, hard-to-soft, PMI, filter.

use std::fmt;
use std::path::Path;

use cofkit_core::color::rgb_to_lab;
use cofkit_core::cooc::{collect_hard, hard_to_soft, normalize_pmi, soft_histogram, MatrixDump, PmiMatrix, RegionMask};
use cofkit_core::filter::{fb_cof, iterate, propagate_scribbles, selective_gray, GuidanceModel, ScribbleSet};
use cofkit_core::io::load_image;
use cofkit_core::quantize::{assign_hard, cluster_affinity, default_sigma_r, kmeans_palette, GuidanceImage, Palette};
use cofkit_core::{CofError, ColorImage};
use thiserror::Error;

use crate::config::PipelineConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Load,
    Quantize,
    Collect,
    Hard2Soft,
    Cooc2Pmi,
    Cof,
    Propagate,
    Save,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Load => "load",
            Stage::Quantize => "quantize",
            Stage::Collect => "collect",
            Stage::Hard2Soft => "hard2soft",
            Stage::Cooc2Pmi => "cooc2pmi",
            Stage::Cof => "cof",
            Stage::Propagate => "propagate",
            Stage::Save => "save",
        })
    }
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: CofError,
}

pub type Result<T> = std::result::Result<T, PipelineError>;

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T>;
}

impl<T> AtStage<T> for std::result::Result<T, CofError> {
    fn at(self, stage: Stage) -> Result<T> {
        self.map_err(|source| PipelineError { stage, source })
    }
}

/// Palette and the per-pixel labels it induces.
#[derive(Debug, Clone)]
pub struct Guidance {
    pub palette: Palette,
    pub guide: GuidanceImage,
}

/// A learned PMI matrix with the affinity bandwidth used to soften it.
#[derive(Debug, Clone)]
pub struct Statistics {
    pub matrix: PmiMatrix,
    pub sigma_r: f64,
}

impl Statistics {
    pub fn dump(&self, palette: &Palette) -> MatrixDump {
        MatrixDump {
            matrix: self.matrix.clone(),
            palette: Some(palette.clone()),
            sigma_r: Some(self.sigma_r),
        }
    }
}

pub fn quantize(cfg: &PipelineConfig, img: &ColorImage) -> Result<Guidance> {
    let lab = rgb_to_lab(img);
    let palette = kmeans_palette(&lab, cfg.k, cfg.grid_spacing, cfg.seed).at(Stage::Quantize)?;
    let guide = assign_hard(&lab, &palette);
    Ok(Guidance { palette, guide })
}

/// Labels `img` with an existing palette.
pub fn relabel(palette: &Palette, img: &ColorImage) -> Guidance {
    Guidance {
        palette: palette.clone(),
        guide: assign_hard(&rgb_to_lab(img), palette),
    }
}

fn resolve_sigma_r(cfg: &PipelineConfig, palette: &Palette) -> Result<f64> {
    match cfg.sigma_r {
        Some(r) => Ok(r),
        None if palette.k() < 2 => Ok(0.0),
        None => default_sigma_r(palette).at(Stage::Hard2Soft),
    }
}

/// Collect, soften and normalize statistics over `mask` (whole image when
/// `None`). `sigma_r` overrides the configured bandwidth.
pub fn learn_statistics(
    cfg: &PipelineConfig,
    guidance: &Guidance,
    mask: Option<&RegionMask>,
    sigma_r: Option<f64>,
) -> Result<Statistics> {
    let (c, h) = collect_hard(&guidance.guide, cfg.sigma_s(), cfg.window, mask).at(Stage::Collect)?;
    let sigma_r = match sigma_r {
        Some(r) => r,
        None => resolve_sigma_r(cfg, &guidance.palette)?,
    };
    let affinity = cluster_affinity(&guidance.palette, sigma_r).at(Stage::Hard2Soft)?;
    let c_soft = hard_to_soft(&c, &affinity).at(Stage::Hard2Soft)?;
    let h_soft = soft_histogram(&h, &affinity).at(Stage::Hard2Soft)?;
    let matrix = normalize_pmi(&c_soft, &h_soft, cfg.epsilon).at(Stage::Cooc2Pmi)?;
    Ok(Statistics { matrix, sigma_r })
}

/// Reads a gray mask image; pixels at or above mid-gray are inside.
pub fn load_mask(path: &Path, dims: (usize, usize)) -> Result<RegionMask> {
    let img = load_image(path).at(Stage::Load)?;
    if img.dimensions() != dims {
        return Err(PipelineError {
            stage: Stage::Load,
            source: CofError::DimensionMismatch {
                expected: format!("{}x{}", dims.0, dims.1),
                actual: format!("{}x{}", img.width(), img.height()),
            },
        });
    }
    let flags = img
        .pixels()
        .iter()
        .map(|p| cofkit_core::color::luma(*p) >= 0.5)
        .collect();
    RegionMask::new(dims.0, dims.1, flags).at(Stage::Load)
}

pub fn load_dump(path: &Path) -> Result<MatrixDump> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CofError::MalformedDump(format!("cannot read {}: {e}", path.display())))
        .at(Stage::Load)?;
    MatrixDump::from_json(&text).at(Stage::Load)
}

pub fn save_dump(dump: &MatrixDump, path: &Path) -> Result<()> {
    std::fs::write(path, dump.to_json())
        .map_err(|e| CofError::Encode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
        .at(Stage::Save)
}

/// Guidance and statistics from a dump that carries its palette.
pub fn from_dump(dump: &MatrixDump, img: &ColorImage) -> Result<(Guidance, Statistics)> {
    let palette = dump
        .palette
        .as_ref()
        .ok_or_else(|| CofError::MalformedDump("dump carries no palette".into()))
        .at(Stage::Load)?;
    if palette.k() != dump.matrix.dim() {
        return Err(PipelineError {
            stage: Stage::Load,
            source: CofError::MalformedDump(format!(
                "palette has {} colors, matrix dim is {}",
                palette.k(),
                dump.matrix.dim()
            )),
        });
    }
    let stats = Statistics {
        matrix: dump.matrix.clone(),
        sigma_r: dump.sigma_r.unwrap_or(0.0),
    };
    Ok((relabel(palette, img), stats))
}

/// Iteration model for the quantized path: the palette stays fixed, labels
/// follow the current image and rolling mode relearns the matrix from them.
pub struct PaletteModel<'a> {
    pub cfg: &'a PipelineConfig,
    pub palette: &'a Palette,
    pub sigma_r: f64,
}

impl GuidanceModel<[f64; 3]> for PaletteModel<'_> {
    fn relabel(&mut self, img: &ColorImage) -> std::result::Result<GuidanceImage, CofError> {
        Ok(relabel(self.palette, img).guide)
    }

    fn relearn(&mut self, img: &ColorImage) -> std::result::Result<(GuidanceImage, PmiMatrix), CofError> {
        let guidance = relabel(self.palette, img);
        let stats = learn_statistics(self.cfg, &guidance, None, Some(self.sigma_r)).map_err(|e| e.source)?;
        Ok((guidance.guide, stats.matrix))
    }
}

pub fn apply_cof(
    cfg: &PipelineConfig,
    img: &ColorImage,
    guidance: &Guidance,
    stats: &Statistics,
) -> Result<(ColorImage, Vec<f64>)> {
    let mut model = PaletteModel {
        cfg,
        palette: &guidance.palette,
        sigma_r: stats.sigma_r,
    };
    let out = iterate(img, &guidance.guide, &stats.matrix, &cfg.filter_params(), &mut model).at(Stage::Cof)?;
    Ok((out.image, out.msd))
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub image: ColorImage,
    pub guidance: Guidance,
    pub statistics: Statistics,
    /// Mean squared difference per iteration.
    pub msd: Vec<f64>,
}

/// Guidance and statistics as configured: either loaded from `matrix_in` or
/// learned from `img` over the optional region mask. Writes `matrix_out`.
pub fn prepare(cfg: &PipelineConfig, img: &ColorImage) -> Result<(Guidance, Statistics)> {
    let (guidance, stats) = match &cfg.matrix_in {
        Some(path) => from_dump(&load_dump(path)?, img)?,
        None => {
            let mask = match &cfg.region_mask {
                Some(path) => Some(load_mask(path, img.dimensions())?),
                None => None,
            };
            let guidance = quantize(cfg, img)?;
            let stats = learn_statistics(cfg, &guidance, mask.as_ref(), None)?;
            (guidance, stats)
        }
    };
    if let Some(path) = &cfg.matrix_out {
        save_dump(&stats.dump(&guidance.palette), path)?;
    }
    Ok((guidance, stats))
}

pub fn run_pipeline_detailed(cfg: &PipelineConfig, img: &ColorImage) -> Result<PipelineOutput> {
    let (guidance, statistics) = prepare(cfg, img)?;
    let (image, msd) = apply_cof(cfg, img, &guidance, &statistics)?;
    Ok(PipelineOutput {
        image,
        guidance,
        statistics,
        msd,
    })
}

/// Filters `img` as configured. Zero iterations return the input untouched.
pub fn run_pipeline(cfg: &PipelineConfig, img: &ColorImage) -> Result<ColorImage> {
    if cfg.iterations == 0 {
        return Ok(img.clone());
    }
    Ok(run_pipeline_detailed(cfg, img)?.image)
}

/// Foreground mask grown from scribbles plus the statistics on each side.
#[derive(Debug, Clone)]
pub struct Selection {
    pub mask: RegionMask,
    pub foreground: Statistics,
    pub background: Statistics,
}

pub fn select(
    cfg: &PipelineConfig,
    guidance: &Guidance,
    total: &Statistics,
    scribbles: &ScribbleSet,
) -> Result<Selection> {
    let params = cfg.filter_params();
    let mask = propagate_scribbles(
        scribbles,
        &guidance.guide,
        &total.matrix,
        &params,
        cfg.mask_threshold,
        cfg.scribble_iterations,
    )
    .at(Stage::Propagate)?;
    let foreground = learn_statistics(cfg, guidance, Some(&mask), Some(total.sigma_r))?;
    let background = learn_statistics(cfg, guidance, Some(&mask.complement()), Some(total.sigma_r))?;
    Ok(Selection {
        mask,
        foreground,
        background,
    })
}

/// Keeps the foreground sharp and smooths the background.
pub fn render_fb(cfg: &PipelineConfig, img: &ColorImage, guidance: &Guidance, fg: &PmiMatrix, bg: &PmiMatrix) -> Result<ColorImage> {
    fb_cof(img, &guidance.guide, fg, bg, &cfg.filter_params(), true).at(Stage::Cof)
}

/// Keeps foreground color and fades the background to gray.
pub fn render_recolor(
    cfg: &PipelineConfig,
    img: &ColorImage,
    guidance: &Guidance,
    fg: &PmiMatrix,
    bg: &PmiMatrix,
) -> Result<ColorImage> {
    selective_gray(img, &guidance.guide, fg, bg, &cfg.filter_params()).at(Stage::Cof)
}
