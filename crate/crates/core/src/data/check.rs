use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use super::{pair_files, Pairing};
use crate::error::Result;

/// Grey levels strictly between these bounds make a mask non-binary. The
/// margin tolerates JPEG ringing around 0 and 255.
pub const BINARY_LOW: u8 = 15;
pub const BINARY_HIGH: u8 = 240;

/// Findings of [`check_dataset`].
#[derive(Debug, Clone, Default)]
pub struct DatasetReport {
    pub pairing: Pairing,
    pub non_binary_masks: Vec<PathBuf>,
    pub unreadable: Vec<(PathBuf, String)>,
    pub size_mismatch: Vec<String>,
    /// Image `(width, height)` -> count.
    pub resolutions: BTreeMap<(u32, u32), usize>,
}

impl DatasetReport {
    pub fn num_records(&self) -> usize {
        self.pairing.records.len()
    }

    pub fn num_issues(&self) -> usize {
        self.pairing.images_without_mask.len()
            + self.pairing.masks_without_image.len()
            + self.pairing.duplicate_ids.len()
            + self.non_binary_masks.len()
            + self.unreadable.len()
            + self.size_mismatch.len()
    }

    pub fn is_clean(&self) -> bool {
        self.num_issues() == 0
    }
}

impl fmt::Display for DatasetReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} records, {} issues", self.num_records(), self.num_issues())?;
        for id in &self.pairing.images_without_mask {
            writeln!(f, "missing mask: {id}")?;
        }
        for id in &self.pairing.masks_without_image {
            writeln!(f, "missing image: {id}")?;
        }
        for id in &self.pairing.duplicate_ids {
            writeln!(f, "duplicate id: {id}")?;
        }
        for p in &self.non_binary_masks {
            writeln!(f, "warning: non-binary mask {}", p.display())?;
        }
        for (p, e) in &self.unreadable {
            writeln!(f, "unreadable: {} ({e})", p.display())?;
        }
        for id in &self.size_mismatch {
            writeln!(f, "image/mask size mismatch: {id}")?;
        }
        writeln!(f, "resolutions:")?;
        for ((w, h), n) in &self.resolutions {
            writeln!(f, "  {w}x{h}: {n}")?;
        }
        Ok(())
    }
}

/// Whether every grey level is near 0 or near 255.
pub fn is_binary_mask(values: &[u8]) -> bool {
    values.iter().all(|&v| v <= BINARY_LOW || v >= BINARY_HIGH)
}

/// Validates a dataset root without failing on content problems.
pub fn check_dataset(root: &Path) -> Result<DatasetReport> {
    let pairing = pair_files(root)?;
    let mut report = DatasetReport::default();
    for r in &pairing.records {
        let image_dims = match image::image_dimensions(&r.image_path) {
            Ok(d) => {
                *report.resolutions.entry(d).or_default() += 1;
                Some(d)
            }
            Err(e) => {
                report.unreadable.push((r.image_path.clone(), e.to_string()));
                None
            }
        };
        match image::open(&r.mask_path) {
            Ok(m) => {
                let m = m.to_luma8();
                if image_dims.is_some_and(|d| d != m.dimensions()) {
                    report.size_mismatch.push(r.id.clone());
                }
                if !is_binary_mask(m.as_raw()) {
                    report.non_binary_masks.push(r.mask_path.clone());
                }
            }
            Err(e) => report.unreadable.push((r.mask_path.clone(), e.to_string())),
        }
    }
    report.pairing = pairing;
    Ok(report)
}
