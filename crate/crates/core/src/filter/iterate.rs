use crate::color::mse;
use crate::cooc::{collect_gray, normalize_pmi, PmiMatrix, RegionMask};
use crate::error::{CofError, Result};
use crate::image::{GrayImage, Image, Sample};
use crate::quantize::GuidanceImage;

use super::{guided_cof, FilterParams, IterationMode};

/// How guidance labels and statistics follow the image between rounds.
pub trait GuidanceModel<P> {
    /// Labels of the current image under the statistics learned so far.
    fn relabel(&mut self, img: &Image<P>) -> Result<GuidanceImage>;

    /// Labels and a freshly learned matrix for the current image.
    fn relearn(&mut self, img: &Image<P>) -> Result<(GuidanceImage, PmiMatrix)>;
}

/// Keeps the initial labels for every round; cannot relearn.
#[derive(Debug, Clone)]
pub struct FixedGuidance(pub GuidanceImage);

impl<P> GuidanceModel<P> for FixedGuidance {
    fn relabel(&mut self, _img: &Image<P>) -> Result<GuidanceImage> {
        Ok(self.0.clone())
    }

    fn relearn(&mut self, _img: &Image<P>) -> Result<(GuidanceImage, PmiMatrix)> {
        Err(CofError::param(
            "mode",
            "rolling iteration needs a model that can relearn statistics",
        ))
    }
}

/// Unquantized gray path: labels are the 8-bit levels of the current image.
#[derive(Debug, Clone)]
pub struct GrayLevels {
    pub sigma: f64,
    pub window: usize,
    pub epsilon: f64,
    pub mask: Option<RegionMask>,
}

impl GrayLevels {
    pub fn learn(&self, img: &GrayImage) -> Result<(GuidanceImage, PmiMatrix)> {
        let (c, h) = collect_gray(img, self.sigma, self.window, self.mask.as_ref())?;
        let m = normalize_pmi(&c, &h, self.epsilon)?;
        let guide = GuidanceImage::from_levels(img.width(), img.height(), &img.levels())?;
        Ok((guide, m))
    }
}

impl GuidanceModel<f64> for GrayLevels {
    fn relabel(&mut self, img: &GrayImage) -> Result<GuidanceImage> {
        GuidanceImage::from_levels(img.width(), img.height(), &img.levels())
    }

    fn relearn(&mut self, img: &GrayImage) -> Result<(GuidanceImage, PmiMatrix)> {
        self.learn(img)
    }
}

#[derive(Debug, Clone)]
pub struct IterationOutcome<P> {
    pub image: Image<P>,
    /// Mean squared difference between successive rounds; one per round.
    pub msd: Vec<f64>,
}

/// Applies the guided filter `params.iterations` times.
///
/// The first round always uses `guide` and `m`. Later rounds either relabel
/// the current output and keep `m` ([`IterationMode::Iterative`]) or relearn
/// both from the current output ([`IterationMode::Rolling`]).
pub fn iterate<P: Sample, G: GuidanceModel<P>>(
    img: &Image<P>,
    guide: &GuidanceImage,
    m: &PmiMatrix,
    params: &FilterParams,
    model: &mut G,
) -> Result<IterationOutcome<P>> {
    params.validate()?;
    let mut current = img.clone();
    let mut msd = Vec::with_capacity(params.iterations);
    let mut guide = guide.clone();
    let mut m = m.clone();
    for round in 0..params.iterations {
        if round > 0 {
            match params.mode {
                IterationMode::Iterative => guide = model.relabel(&current)?,
                IterationMode::Rolling => (guide, m) = model.relearn(&current)?,
            }
        }
        let next = guided_cof(&current, &guide, &m, params)?;
        msd.push(mse(&next, &current)?);
        current = next;
    }
    Ok(IterationOutcome {
        image: current,
        msd,
    })
}
