//! Decoding and conversion of images to the 32×32×3 network input format.

use std::path::Path;

use image::{DynamicImage, RgbImage};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::NumericArray;
use crate::{IMAGE_CHANNELS, IMAGE_SIZE};

/// Decodes a PNG or JPEG file.
pub fn load_image(path: &Path) -> Result<DynamicImage> {
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Hex SHA-256 over the decoded RGB pixels at native resolution.
///
/// Width and height (little-endian `u32`) prefix the pixel bytes so that
/// equal byte streams of different geometry do not collide.
pub fn content_hash(img: &RgbImage) -> String {
    let mut hasher = Sha256::new();
    hasher.update(img.width().to_le_bytes());
    hasher.update(img.height().to_le_bytes());
    hasher.update(img.as_raw());
    hex::encode(hasher.finalize())
}

/// Bilinear resize of an HWC buffer with corner-aligned sampling: output
/// pixel `i` samples source coordinate `i * (in - 1) / (out - 1)`.
pub fn resize_bilinear(
    src: &[f64],
    height: usize,
    width: usize,
    channels: usize,
    out_height: usize,
    out_width: usize,
) -> Vec<f64> {
    assert_eq!(src.len(), height * width * channels);
    let scale = |n_in: usize, n_out: usize| {
        if n_out > 1 {
            (n_in - 1) as f64 / (n_out - 1) as f64
        } else {
            0.0
        }
    };
    let sy = scale(height, out_height);
    let sx = scale(width, out_width);
    let mut out = vec![0.0; out_height * out_width * channels];
    for oy in 0..out_height {
        let fy = oy as f64 * sy;
        let y0 = (fy.floor() as usize).min(height - 1);
        let y1 = (y0 + 1).min(height - 1);
        let ty = fy - y0 as f64;
        for ox in 0..out_width {
            let fx = ox as f64 * sx;
            let x0 = (fx.floor() as usize).min(width - 1);
            let x1 = (x0 + 1).min(width - 1);
            let tx = fx - x0 as f64;
            let dst = &mut out[(oy * out_width + ox) * channels..][..channels];
            for (c, d) in dst.iter_mut().enumerate() {
                let p = |y: usize, x: usize| src[(y * width + x) * channels + c];
                let top = p(y0, x0) * (1.0 - tx) + p(y0, x1) * tx;
                let bottom = p(y1, x0) * (1.0 - tx) + p(y1, x1) * tx;
                *d = top * (1.0 - ty) + bottom * ty;
            }
        }
    }
    out
}

/// Converts a decoded image to a (32, 32, 3) array with values in `[0, 1]`.
///
/// Grayscale inputs are replicated across the three channels and any alpha
/// channel is dropped.
pub fn preprocess_image(img: &DynamicImage) -> Result<NumericArray> {
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::validation("image has no pixels"));
    }
    let rgb = img.to_rgb8();
    Ok(preprocess_rgb(&rgb))
}

pub(crate) fn preprocess_rgb(rgb: &RgbImage) -> NumericArray {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let src: Vec<f64> = rgb.as_raw().iter().map(|&b| b as f64).collect();
    let values = if w == IMAGE_SIZE && h == IMAGE_SIZE {
        src
    } else {
        resize_bilinear(&src, h, w, IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE)
    };
    let values = values.into_iter().map(|v| v / 255.0).collect();
    NumericArray::new(vec![IMAGE_SIZE, IMAGE_SIZE, IMAGE_CHANNELS], values)
        .expect("resize produces a full frame")
}

/// Decodes and preprocesses the image at `path`.
pub fn load_preprocessed(path: &Path) -> Result<NumericArray> {
    preprocess_image(&load_image(path)?)
}

/// Quantises a `[0, 1]` HWC array back to 8-bit RGB.
pub fn to_rgb_image(array: &NumericArray) -> Result<RgbImage> {
    let shape = array.shape();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(Error::validation(format!(
            "expected an (H, W, 3) array, got {shape:?}"
        )));
    }
    let bytes = array
        .values()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    RgbImage::from_raw(shape[1] as u32, shape[0] as u32, bytes)
        .ok_or_else(|| Error::validation("pixel buffer does not match geometry"))
}
