//! 8-bit image files to and from tensors.

use std::path::Path;

use image::{GrayImage, RgbImage};
use masksup_core::{HoleMask, ImageTensor, LabelMap};

use crate::error::{Error, Result};

/// Decodes any supported image as RGB in `[0, 1]`.
pub fn load_rgb(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path).map_err(Error::image(path))?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| f32::from(v) / 255.0).collect();
    Ok(ImageTensor::new(h as usize, w as usize, 3, data)?)
}

/// Decodes a label map; each pixel's gray level is its class index.
pub fn load_labels(path: &Path) -> Result<LabelMap> {
    let img = image::open(path).map_err(Error::image(path))?;
    let gray = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => other.to_luma8(),
    };
    let (w, h) = gray.dimensions();
    Ok(LabelMap::new(h as usize, w as usize, gray.into_raw())?)
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_rgb(image: &ImageTensor, path: &Path) -> Result<()> {
    let (h, w, c) = image.dims();
    let mut buf = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let p = image.pixel(y, x);
            for ch in 0..3 {
                buf.push(to_u8(p[ch.min(c - 1)]));
            }
        }
    }
    let img = RgbImage::from_raw(w as u32, h as u32, buf).expect("sized buffer");
    img.save(path).map_err(Error::image(path))
}

/// Writes class indices as gray levels (lossless PNG).
pub fn save_labels(labels: &LabelMap, path: &Path) -> Result<()> {
    let img = GrayImage::from_raw(labels.width() as u32, labels.height() as u32, labels.data().to_vec())
        .expect("sized buffer");
    img.save(path).map_err(Error::image(path))
}

/// Writes a mask with kept pixels white and removed pixels black.
pub fn save_mask(mask: &HoleMask, path: &Path) -> Result<()> {
    let data = mask.data().iter().map(|&v| v * 255).collect();
    let img = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, data).expect("sized buffer");
    img.save(path).map_err(Error::image(path))
}

/// Reads a mask written by [`save_mask`]; gray levels below 128 count as removed.
pub fn load_mask(path: &Path) -> Result<HoleMask> {
    let gray = image::open(path).map_err(Error::image(path))?.to_luma8();
    let (w, h) = gray.dimensions();
    let data = gray.into_raw().into_iter().map(|v| u8::from(v >= 128)).collect();
    Ok(HoleMask::from_vec(h as usize, w as usize, data)?)
}
