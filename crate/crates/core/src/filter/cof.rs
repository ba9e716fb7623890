use crate::cooc::PmiMatrix;
use crate::error::{CofError, Result};
use crate::image::{GrayImage, Image, Sample};
use crate::quantize::GuidanceImage;

use super::{windowed_average, FilterParams, SpatialKernel};

/// Co-occurrence filter on a gray image; `M` is indexed by 8-bit levels.
pub fn cof_gray(img: &GrayImage, m: &PmiMatrix, params: &FilterParams) -> Result<GrayImage> {
    params.validate()?;
    if m.dim() != 256 {
        return Err(CofError::dims((256, 256), (m.dim(), m.dim())));
    }
    let levels = img.levels();
    let shape = m.shape();
    let kernel = SpatialKernel::new(params.window, params.sigma_s);
    Ok(windowed_average(img, &kernel, |p, q| {
        shape[usize::from(levels[p]) * 256 + usize::from(levels[q])]
    }))
}

/// Guided co-occurrence filter: weights come from the labels of `guide`, and
/// one weight field is shared by all channels of `img`.
pub fn guided_cof<P: Sample>(
    img: &Image<P>,
    guide: &GuidanceImage,
    m: &PmiMatrix,
    params: &FilterParams,
) -> Result<Image<P>> {
    params.validate()?;
    if img.dimensions() != guide.dimensions() {
        return Err(CofError::dims(img.dimensions(), guide.dimensions()));
    }
    let k = m.dim();
    if guide.k() != k {
        return Err(CofError::dims((guide.k(), guide.k()), (k, k)));
    }
    let labels = guide.labels();
    let shape = m.shape();
    let kernel = SpatialKernel::new(params.window, params.sigma_s);
    Ok(windowed_average(img, &kernel, |p, q| {
        shape[usize::from(labels[p]) * k + usize::from(labels[q])]
    }))
}
