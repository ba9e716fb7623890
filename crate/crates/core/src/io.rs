//! PNG and binary PNM (P5/P6) reading, PNG writing. 8-bit only.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat};

use crate::error::{CofError, Result};
use crate::image::{to_level, ColorImage, Image, Sample};

pub fn load_image(path: impl AsRef<Path>) -> Result<ColorImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| CofError::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    decode_image(&bytes, path)
}

/// Decodes in-memory PNG/PNM bytes. `origin` only labels errors.
pub fn decode_image(bytes: &[u8], origin: impl AsRef<Path>) -> Result<ColorImage> {
    let origin = origin.as_ref();
    let fail = |reason: String| CofError::Decode {
        path: origin.to_path_buf(),
        reason,
    };
    let format = image::guess_format(bytes).map_err(|e| fail(e.to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
        return Err(fail(format!("unsupported format {format:?}")));
    }
    let decoded =
        image::load_from_memory_with_format(bytes, format).map_err(|e| fail(e.to_string()))?;
    let rgb = match decoded {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => decoded.to_rgb8(),
        other => {
            return Err(fail(format!(
                "unsupported sample layout {:?}, only 8-bit images are read",
                other.color()
            )))
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data = rgb
        .pixels()
        .map(|p| p.0.map(|v| f64::from(v) / 255.0))
        .collect();
    Ok(Image::from_parts(w, h, data))
}

/// Reads only the header and returns `(width, height)`.
pub fn peek_dimensions(bytes: &[u8]) -> Result<(usize, usize)> {
    let reader = image::ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| CofError::Decode {
            path: PathBuf::from("<memory>"),
            reason: e.to_string(),
        })?;
    let (w, h) = reader.into_dimensions().map_err(|e| CofError::Decode {
        path: PathBuf::from("<memory>"),
        reason: e.to_string(),
    })?;
    Ok((w as usize, h as usize))
}

fn to_dynamic<P: Sample>(img: &Image<P>) -> DynamicImage {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let bytes: Vec<u8> = img.samples().map(to_level).collect();
    if P::CHANNELS == 1 {
        DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, bytes).expect("buffer size"))
    } else {
        DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, bytes).expect("buffer size"))
    }
}

/// Writes an 8-bit PNG (grayscale for single-channel images, RGB otherwise).
pub fn save_image<P: Sample>(img: &Image<P>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|e| CofError::Encode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn encode_png<P: Sample>(img: &Image<P>) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    to_dynamic(img)
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| CofError::Encode {
            path: PathBuf::from("<memory>"),
            reason: e.to_string(),
        })?;
    Ok(out.into_inner())
}
