//! Scribble wire formats.
//!
//! RLE JSON: `{"width": W, "height": H, "runs": [[value, length], ...]}` where
//! runs cover the raster in row-major order and `value` is 0 (unmarked),
//! 1 (foreground) or 2 (background).
//!
//! PNG: opaque red-dominant pixels are foreground, opaque blue-dominant
//! pixels are background, everything else is unmarked.

use cofkit_core::filter::{ScribbleSet, Stroke};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest raster accepted from either format.
pub const MAX_PIXELS: usize = 16_000_000;

#[derive(Debug, Error)]
pub enum ScribbleError {
    #[error("runs cover {covered} pixels, {width}x{height} needs {expected}")]
    Coverage {
        width: usize,
        height: usize,
        covered: usize,
        expected: usize,
    },
    #[error("run {index} has zero length")]
    EmptyRun { index: usize },
    #[error("run {index} has unknown value {value}")]
    BadValue { index: usize, value: u8 },
    #[error("raster of {0} pixels is too large")]
    TooLarge(usize),
    #[error("cannot decode scribble image: {0}")]
    Image(String),
    #[error("malformed scribble JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RleScribbles {
    pub width: usize,
    pub height: usize,
    pub runs: Vec<(u8, usize)>,
}

impl RleScribbles {
    pub fn from_json(s: &str) -> Result<Self, ScribbleError> {
        serde_json::from_str(s).map_err(|e| ScribbleError::Json(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("runs serialize")
    }
}

pub fn encode_rle(scribbles: &ScribbleSet) -> RleScribbles {
    let (width, height) = scribbles.dimensions();
    let mut runs: Vec<(u8, usize)> = Vec::new();
    for &s in scribbles.marks() {
        match runs.last_mut() {
            Some((v, n)) if *v == s as u8 => *n += 1,
            _ => runs.push((s as u8, 1)),
        }
    }
    RleScribbles { width, height, runs }
}

pub fn decode_rle(rle: &RleScribbles) -> Result<ScribbleSet, ScribbleError> {
    let expected = rle
        .width
        .checked_mul(rle.height)
        .filter(|&n| n <= MAX_PIXELS)
        .ok_or(ScribbleError::TooLarge(rle.width.saturating_mul(rle.height)))?;
    let mut marks = Vec::with_capacity(expected);
    for (index, &(value, len)) in rle.runs.iter().enumerate() {
        if len == 0 {
            return Err(ScribbleError::EmptyRun { index });
        }
        let stroke = Stroke::try_from(value).map_err(|_| ScribbleError::BadValue { index, value })?;
        if marks.len() + len > expected {
            return Err(ScribbleError::Coverage {
                width: rle.width,
                height: rle.height,
                covered: rle.runs.iter().map(|r| r.1).fold(0usize, usize::saturating_add),
                expected,
            });
        }
        marks.extend(std::iter::repeat_n(stroke, len));
    }
    if marks.len() != expected {
        return Err(ScribbleError::Coverage {
            width: rle.width,
            height: rle.height,
            covered: marks.len(),
            expected,
        });
    }
    Ok(ScribbleSet::new(rle.width, rle.height, marks).expect("length checked"))
}

pub fn decode_scribble_png(bytes: &[u8]) -> Result<ScribbleSet, ScribbleError> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| ScribbleError::Image(e.to_string()))?
        .to_rgba8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w * h > MAX_PIXELS {
        return Err(ScribbleError::TooLarge(w * h));
    }
    let marks = img
        .pixels()
        .map(|p| {
            let [r, g, b, a] = p.0;
            if a < 128 {
                Stroke::Unmarked
            } else if r >= 128 && g < 128 && b < 128 {
                Stroke::Foreground
            } else if b >= 128 && r < 128 && g < 128 {
                Stroke::Background
            } else {
                Stroke::Unmarked
            }
        })
        .collect();
    Ok(ScribbleSet::new(w, h, marks).expect("length matches"))
}

/// Red foreground, blue background, transparent elsewhere.
pub fn encode_scribble_png(scribbles: &ScribbleSet) -> Vec<u8> {
    let (w, h) = scribbles.dimensions();
    let raw: Vec<u8> = scribbles
        .marks()
        .iter()
        .flat_map(|s| match s {
            Stroke::Unmarked => [0, 0, 0, 0],
            Stroke::Foreground => [255, 0, 0, 255],
            Stroke::Background => [0, 0, 255, 255],
        })
        .collect();
    let img = image::RgbaImage::from_raw(w as u32, h as u32, raw).expect("buffer size");
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).expect("png encodes to memory");
    out.into_inner()
}
