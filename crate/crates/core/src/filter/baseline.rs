use crate::error::Result;
use crate::image::{Image, Sample};

use super::{windowed_average, FilterParams, SpatialKernel};

/// Spatial Gaussian only; shift invariant.
pub fn gaussian_filter<P: Sample>(img: &Image<P>, params: &FilterParams) -> Result<Image<P>> {
    params.validate()?;
    let kernel = SpatialKernel::new(params.window, params.sigma_s);
    Ok(windowed_average(img, &kernel, |_, _| 1.0))
}

/// Spatial Gaussian times a range Gaussian on the Euclidean sample distance.
pub fn bilateral<P: Sample>(img: &Image<P>, params: &FilterParams) -> Result<Image<P>> {
    params.validate()?;
    let kernel = SpatialKernel::new(params.window, params.sigma_s);
    let src = img.pixels();
    let denom = 2.0 * params.sigma_r * params.sigma_r;
    Ok(windowed_average(img, &kernel, |p, q| {
        let d2 = src[p].dist_sq(src[q]);
        if d2 == 0.0 {
            1.0
        } else {
            (-d2 / denom).exp()
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{ColorImage, GrayImage};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(window: usize, sigma_s: f64, sigma_r: f64) -> FilterParams {
        FilterParams {
            sigma_r,
            ..FilterParams::with_window(window, sigma_s)
        }
    }

    #[test]
    fn constant_image_unchanged() {
        let img = ColorImage::filled(9, 6, [0.3, 0.6, 0.9]);
        let out = gaussian_filter(&img, &params(3, 2.0, 0.1)).unwrap();
        for (a, b) in out.samples().zip(img.samples()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn impulse_response_is_kernel() {
        let n = 11;
        let mut data = vec![0.0; n * n];
        data[5 * n + 5] = 1.0;
        let img = GrayImage::new(n, n, data).unwrap();
        let out = gaussian_filter(&img, &params(2, 1.5, 0.1)).unwrap();
        let kernel = SpatialKernel::new(2, 1.5);
        let center = out.get(5, 5) / kernel.at(0, 0);
        for dy in -2isize..=2 {
            for dx in -2isize..=2 {
                let got = out.get((5 + dx) as usize, (5 + dy) as usize);
                assert_abs_diff_eq!(got, center * kernel.at(dx, dy), epsilon = 1e-15);
            }
        }
        assert_eq!(out.get(0, 0), 0.0);
    }

    #[test]
    fn kernel_symmetries() {
        let k = SpatialKernel::new(4, 2.3);
        for dy in -4isize..=4 {
            for dx in -4isize..=4 {
                let v = k.at(dx, dy);
                assert!(v > 0.0 && v <= 1.0);
                assert_eq!(v, k.at(-dy, dx));
                assert_eq!(v, k.at(-dx, dy));
                assert_eq!(v, k.at(dy, dx));
            }
        }
        assert_eq!(k.at(0, 0), 1.0);
    }

    #[test]
    fn bilateral_wide_range_is_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = (0..144).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let img = ColorImage::new(12, 12, data).unwrap();
        let g = gaussian_filter(&img, &params(3, 2.0, 0.0)).unwrap();
        let b = bilateral(&img, &params(3, 2.0, f64::INFINITY)).unwrap();
        for (x, y) in g.samples().zip(b.samples()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-9);
        }
    }

    #[test]
    fn bilateral_narrow_range_keeps_step() {
        let img = GrayImage::from_fn(10, 6, |x, _| if x < 5 { 0.2 } else { 0.8 }).unwrap();
        let out = bilateral(&img, &params(3, 2.0, 1e-3)).unwrap();
        for (a, b) in out.samples().zip(img.samples()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
