//! Mask prediction for image files.

use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use image::{GrayImage, RgbImage};

use crate::data::{make_batch, preprocess_pair, Normalization, RawPair, EXTENSIONS};
use crate::error::{Error, Result};
use crate::model::Segmenter;
use crate::nn::resize_bilinear;

/// Outcome of [`infer_paths`].
#[derive(Debug, Clone, Default)]
pub struct InferSummary {
    pub written: Vec<PathBuf>,
    pub failed: Vec<(PathBuf, String)>,
}

/// Image files of a directory (sorted), or the single file given.
pub fn collect_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let entries = std::fs::read_dir(input).map_err(|e| Error::io(input, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Predicts a `{0, 255}` mask at the image's own resolution. The network runs
/// at `size`; its logits are resized bilinearly back to the source size and
/// thresholded there (`sigmoid(logit) > threshold`).
pub fn predict_mask(
    model: &dyn Segmenter,
    image: &RgbImage,
    size: (usize, usize),
    norm: &Normalization,
    threshold: f64,
) -> Result<GrayImage> {
    let (w, h) = image.dimensions();
    let pair = RawPair {
        id: String::new(),
        image: image.clone(),
        mask: GrayImage::new(w, h),
    };
    let sample = preprocess_pair(&pair, size, norm)?;
    let (x, _) = make_batch(std::slice::from_ref(&sample), DType::F32, &Device::Cpu)?;
    let logits = model.predict(&x)?;
    let logits: Tensor = resize_bilinear(&logits.to_dtype(DType::F64)?, h as usize, w as usize)?;
    let values: Vec<f64> = logits.get(0)?.get(0)?.flatten_all()?.to_vec1()?;
    let data = crate::metrics::binarize_logits(&values, threshold)
        .into_iter()
        .map(|v| v * 255)
        .collect();
    Ok(GrayImage::from_raw(w, h, data).expect("buffer matches dimensions"))
}

/// Writes `<out_dir>/<stem>.png` for every input. Unreadable inputs are
/// logged and skipped; it is an error only if every input fails.
pub fn infer_paths(
    model: &dyn Segmenter,
    inputs: &[PathBuf],
    out_dir: &Path,
    size: (usize, usize),
    norm: &Normalization,
    threshold: f64,
) -> Result<InferSummary> {
    if inputs.is_empty() {
        return Err(Error::Usage("no input images found".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut summary = InferSummary::default();
    for path in inputs {
        let result = image::open(path)
            .map_err(Error::from)
            .and_then(|img| predict_mask(model, &img.to_rgb8(), size, norm, threshold))
            .and_then(|mask| {
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("mask");
                let out = out_dir.join(format!("{stem}.png"));
                mask.save(&out)?;
                Ok(out)
            });
        match result {
            Ok(out) => summary.written.push(out),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                summary.failed.push((path.clone(), e.to_string()));
            }
        }
    }
    if summary.written.is_empty() {
        return Err(Error::Ingestion(format!(
            "all {} inputs failed; first: {}",
            inputs.len(),
            summary.failed[0].1
        )));
    }
    Ok(summary)
}
