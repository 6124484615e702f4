//! Synthetic "white disk on black" datasets for tests and demos.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::RawPair;
use crate::error::{Error, Result};

/// A square image with a white disk and its exact mask. Pixel `(x, y)` is
/// foreground iff its centre lies within `radius` of `center`.
pub fn disk_pair(id: &str, size: u32, center: (f64, f64), radius: f64) -> RawPair {
    let inside = |x: u32, y: u32| {
        let dx = x as f64 + 0.5 - center.0;
        let dy = y as f64 + 0.5 - center.1;
        dx * dx + dy * dy <= radius * radius
    };
    RawPair {
        id: id.to_string(),
        image: RgbImage::from_fn(size, size, |x, y| {
            if inside(x, y) {
                Rgb([255, 255, 255])
            } else {
                Rgb([0, 0, 0])
            }
        }),
        mask: GrayImage::from_fn(size, size, |x, y| Luma([if inside(x, y) { 255 } else { 0 }])),
    }
}

/// `ids.len()` disks with seeded random centres and radii in
/// `[size/8, size/4]`, fully inside the frame.
pub fn random_disk_pairs(ids: &[&str], size: u32, seed: u64) -> Vec<RawPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    ids.iter()
        .map(|id| {
            let r = rng.random_range(s / 8.0..=s / 4.0);
            let cx = rng.random_range(r..=s - r);
            let cy = rng.random_range(r..=s - r);
            disk_pair(id, size, (cx, cy), r)
        })
        .collect()
}

/// `ids.len()` large disks (radius `0.3 * size`) whose centres step across
/// the middle row, so every image differs but all are easy to fit.
pub fn large_disk_pairs(ids: &[&str], size: u32) -> Vec<RawPair> {
    let s = size as f64;
    let mid = (ids.len() as f64 - 1.0) / 2.0;
    ids.iter()
        .enumerate()
        .map(|(i, id)| disk_pair(id, size, (s / 2.0 + (i as f64 - mid) * s / 40.0, s / 2.0), 0.3 * s))
        .collect()
}

/// Writes `images/<id>.png` and `masks/<id>.png` under `root`.
pub fn write_pairs(root: &Path, pairs: &[RawPair]) -> Result<()> {
    for sub in ["images", "masks"] {
        let dir = root.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for p in pairs {
        p.image.save(root.join("images").join(format!("{}.png", p.id)))?;
        p.mask.save(root.join("masks").join(format!("{}.png", p.id)))?;
    }
    Ok(())
}

/// Random disk dataset with the given ids.
pub fn write_disk_dataset(root: &Path, ids: &[&str], size: u32, seed: u64) -> Result<()> {
    write_pairs(root, &random_disk_pairs(ids, size, seed))
}

/// Zero-padded numeric ids `0000, 0001, ...`.
pub fn numbered_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{i:04}")).collect()
}
