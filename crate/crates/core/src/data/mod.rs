//! Dataset ingestion: image/mask pairing, splitting, preprocessing and
//! augmentation.
//!
//! A dataset root holds `images/<id>.{jpg,jpeg,png}` and a matching
//! `masks/<id>.{jpg,jpeg,png}` for every id.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

mod augment;
mod check;
mod preprocess;
mod source;
pub mod synthetic;

pub use check::{check_dataset, is_binary_mask, DatasetReport};
pub use augment::{augment, flip_horizontal, flip_vertical, rotate_arbitrary, rotate_quarter, Augmentation};
pub use preprocess::{binarize_mask, load_and_preprocess, load_pair, preprocess_pair, Normalization, RawPair, Sample};
pub use source::{derive_seed, make_batch, DiskSource, MemorySource, SampleSource};

/// File extensions accepted for images and masks.
pub const EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

/// Which part of a dataset an index covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    All,
    Train,
    Test,
}

/// One image/mask pair on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub id: String,
}

/// Records of a dataset (or one split of it), sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub records: Vec<Record>,
    pub split: SplitTag,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.id.as_str()).collect()
    }

    fn subset(&self, ids: &[String], split: SplitTag) -> Result<Self> {
        let by_id: BTreeMap<&str, &Record> = self.records.iter().map(|r| (r.id.as_str(), r)).collect();
        let mut unknown = Vec::new();
        let mut records = Vec::with_capacity(ids.len());
        for id in ids {
            match by_id.get(id.as_str()) {
                Some(r) => records.push((*r).clone()),
                None => unknown.push(id.clone()),
            }
        }
        if !unknown.is_empty() {
            return Err(Error::Ingestion(format!(
                "manifest ids not present in dataset: {}",
                unknown.join(", ")
            )));
        }
        records.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self {
            root: self.root.clone(),
            records,
            split,
        })
    }
}

/// Files of one dataset subdirectory keyed by stem, plus stems seen twice.
fn list_stems(dir: &Path) -> Result<(BTreeMap<String, PathBuf>, Vec<String>)> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut map = BTreeMap::new();
    let mut dupes = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) || !path.is_file() {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if map.insert(stem.to_string(), path.clone()).is_some() {
            dupes.push(stem.to_string());
        }
    }
    Ok((map, dupes))
}

/// Pairing of `images/` and `masks/` without failing on problems.
#[derive(Debug, Clone, Default)]
pub struct Pairing {
    pub records: Vec<Record>,
    pub images_without_mask: Vec<String>,
    pub masks_without_image: Vec<String>,
    pub duplicate_ids: Vec<String>,
}

/// Matches image and mask files by stem.
pub fn pair_files(root: &Path) -> Result<Pairing> {
    for sub in ["images", "masks"] {
        if !root.join(sub).is_dir() {
            return Err(Error::Ingestion(format!(
                "{} has no `{sub}/` subdirectory",
                root.display()
            )));
        }
    }
    let (images, mut dupes) = list_stems(&root.join("images"))?;
    let (mut masks, mask_dupes) = list_stems(&root.join("masks"))?;
    dupes.extend(mask_dupes);
    dupes.sort();
    dupes.dedup();
    let mut out = Pairing {
        duplicate_ids: dupes,
        ..Default::default()
    };
    for (id, image_path) in images {
        match masks.remove(&id) {
            Some(mask_path) => out.records.push(Record {
                image_path,
                mask_path,
                id,
            }),
            None => out.images_without_mask.push(id),
        }
    }
    out.masks_without_image = masks.into_keys().collect();
    Ok(out)
}

/// Indexes a dataset root. Unpaired files are an ingestion error naming the
/// offending ids; an empty dataset is a usage error.
pub fn scan_dataset(root: &Path) -> Result<DatasetIndex> {
    let p = pair_files(root)?;
    let mut problems = Vec::new();
    if !p.images_without_mask.is_empty() {
        problems.push(format!("images without mask: {}", p.images_without_mask.join(", ")));
    }
    if !p.masks_without_image.is_empty() {
        problems.push(format!("masks without image: {}", p.masks_without_image.join(", ")));
    }
    if !p.duplicate_ids.is_empty() {
        problems.push(format!("duplicate ids: {}", p.duplicate_ids.join(", ")));
    }
    if !problems.is_empty() {
        return Err(Error::Ingestion(problems.join("; ")));
    }
    if p.records.is_empty() {
        return Err(Error::Usage(format!("{} contains no image/mask pairs", root.display())));
    }
    log::info!("indexed {} records under {}", p.records.len(), root.display());
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        records: p.records,
        split: SplitTag::All,
    })
}

/// Seeded shuffle split; the first `round(fraction * n)` shuffled records
/// form the training split. Both halves are returned sorted by id.
pub fn split_dataset(index: &DatasetIndex, train_fraction: f64, seed: u64) -> Result<(DatasetIndex, DatasetIndex)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Usage(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut ids: Vec<String> = index.records.iter().map(|r| r.id.clone()).collect();
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * ids.len() as f64).round() as usize;
    let (train, test) = ids.split_at(n_train);
    Ok((
        index.subset(train, SplitTag::Train)?,
        index.subset(test, SplitTag::Test)?,
    ))
}

pub const TRAIN_MANIFEST: &str = "train_ids.txt";
pub const TEST_MANIFEST: &str = "test_ids.txt";

/// Writes `train_ids.txt` and `test_ids.txt` (one id per line) into `dir`.
pub fn write_split_manifest(dir: &Path, train: &DatasetIndex, test: &DatasetIndex) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, idx) in [(TRAIN_MANIFEST, train), (TEST_MANIFEST, test)] {
        let path = dir.join(name);
        let mut text = idx.ids().join("\n");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Re-creates a split from manifest files written by [`write_split_manifest`].
pub fn read_split_manifest(dir: &Path, index: &DatasetIndex) -> Result<(DatasetIndex, DatasetIndex)> {
    let read = |name: &str| -> Result<Vec<String>> {
        let path = dir.join(name);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect())
    };
    let train = index.subset(&read(TRAIN_MANIFEST)?, SplitTag::Train)?;
    let test = index.subset(&read(TEST_MANIFEST)?, SplitTag::Test)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::write_disk_dataset;

    #[test]
    fn scans_sorted_pairs() {
        let dir = tempfile::tempdir().unwrap();
        write_disk_dataset(dir.path(), &["c", "a", "b"], 16, 1).unwrap();
        let idx = scan_dataset(dir.path()).unwrap();
        assert_eq!(idx.ids(), vec!["a", "b", "c"]);
    }

    #[test]
    fn missing_mask_names_id() {
        let dir = tempfile::tempdir().unwrap();
        write_disk_dataset(dir.path(), &["a", "b"], 16, 1).unwrap();
        std::fs::remove_file(dir.path().join("masks/b.png")).unwrap();
        match scan_dataset(dir.path()) {
            Err(Error::Ingestion(msg)) => assert!(msg.contains('b') && !msg.contains("a,")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_root_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("images")).unwrap();
        std::fs::create_dir(dir.path().join("masks")).unwrap();
        assert!(matches!(scan_dataset(dir.path()), Err(Error::Usage(_))));
    }

    fn fake_index(n: usize) -> DatasetIndex {
        DatasetIndex {
            root: PathBuf::from("/x"),
            records: (0..n)
                .map(|i| Record {
                    image_path: PathBuf::from(format!("/x/images/{i:04}.png")),
                    mask_path: PathBuf::from(format!("/x/masks/{i:04}.png")),
                    id: format!("{i:04}"),
                })
                .collect(),
            split: SplitTag::All,
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let idx = fake_index(10);
        let (tr, te) = split_dataset(&idx, 0.9, 5).unwrap();
        assert_eq!((tr.len(), te.len()), (9, 1));
        let (tr2, _) = split_dataset(&idx, 0.9, 5).unwrap();
        assert_eq!(tr, tr2);
        assert!(split_dataset(&idx, 1.0, 5).is_err());
        assert!(split_dataset(&idx, 0.0, 5).is_err());
    }

    #[test]
    fn manifest_roundtrip() {
        let idx = fake_index(20);
        let (tr, te) = split_dataset(&idx, 0.75, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_split_manifest(dir.path(), &tr, &te).unwrap();
        let (tr2, te2) = read_split_manifest(dir.path(), &idx).unwrap();
        assert_eq!((tr, te), (tr2, te2));
    }
}
