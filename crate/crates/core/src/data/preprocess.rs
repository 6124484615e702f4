use std::path::Path;

use image::imageops::{self, FilterType};
use image::{GrayImage, RgbImage};
use ndarray::{Array2, Array3};

use super::Record;
use crate::config::ModelConfig;
use crate::error::{Error, Result};

/// Per-channel `(value / 255 - mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Normalization {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        Self {
            mean: cfg.norm_mean,
            std: cfg.norm_std,
        }
    }

    /// No-op normalisation to `[0, 1]`.
    pub fn unit() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

/// A decoded but not yet resized image/mask pair.
#[derive(Debug, Clone)]
pub struct RawPair {
    pub id: String,
    pub image: RgbImage,
    pub mask: GrayImage,
}

/// A model-ready sample: normalised `(3, H, W)` image and `{0,1}` `(H, W)` mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Array3<f32>,
    pub mask: Array2<u8>,
    pub id: String,
}

impl Sample {
    pub fn size(&self) -> (usize, usize) {
        self.mask.dim()
    }

    pub fn foreground_pixels(&self) -> usize {
        self.mask.iter().filter(|&&v| v != 0).count()
    }
}

/// `1` where the raw value exceeds 127, else `0`.
pub fn binarize_mask(raw: &GrayImage) -> Array2<u8> {
    let (w, h) = raw.dimensions();
    Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        u8::from(raw.get_pixel(x as u32, y as u32)[0] > 127)
    })
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))
}

/// Decodes the two files of a record.
pub fn load_pair(record: &Record) -> Result<RawPair> {
    Ok(RawPair {
        id: record.id.clone(),
        image: open(&record.image_path)?.to_rgb8(),
        mask: open(&record.mask_path)?.to_luma8(),
    })
}

/// Resizes (bilinear image, nearest mask), binarises and normalises.
pub fn preprocess_pair(pair: &RawPair, size: (usize, usize), norm: &Normalization) -> Result<Sample> {
    let (h, w) = size;
    if pair.image.dimensions() != pair.mask.dimensions() {
        return Err(Error::Ingestion(format!(
            "{}: image is {:?} but mask is {:?}",
            pair.id,
            pair.image.dimensions(),
            pair.mask.dimensions()
        )));
    }
    let (w32, h32) = (w as u32, h as u32);
    let resized;
    let image = if pair.image.dimensions() == (w32, h32) {
        &pair.image
    } else {
        resized = imageops::resize(&pair.image, w32, h32, FilterType::Triangle);
        &resized
    };
    let resized_mask;
    let mask = if pair.mask.dimensions() == (w32, h32) {
        &pair.mask
    } else {
        resized_mask = imageops::resize(&pair.mask, w32, h32, FilterType::Nearest);
        &resized_mask
    };
    let image = Array3::from_shape_fn((3, h, w), |(c, y, x)| {
        let v = image.get_pixel(x as u32, y as u32)[c] as f32 / 255.0;
        (v - norm.mean[c]) / norm.std[c]
    });
    Ok(Sample {
        image,
        mask: binarize_mask(mask),
        id: pair.id.clone(),
    })
}

/// Loads a record from disk and brings it to `size`.
pub fn load_and_preprocess(record: &Record, size: (usize, usize), norm: &Normalization) -> Result<Sample> {
    preprocess_pair(&load_pair(record)?, size, norm)
}
