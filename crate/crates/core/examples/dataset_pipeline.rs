//! Writes a synthetic dataset, validates it, splits it and augments a batch.

use candle_core::{DType, Device};
use hybseg::data::synthetic::{numbered_ids, write_disk_dataset};
use hybseg::data::{
    augment, check_dataset, make_batch, scan_dataset, split_dataset, write_split_manifest, DiskSource, Normalization,
    SampleSource,
};
use hybseg::{ModelConfig, RotationMode};
use rand::SeedableRng;

fn main() -> hybseg::Result<()> {
    let n: usize = std::env::args().nth(1).map(|s| s.parse().expect("count")).unwrap_or(100);
    let root = std::env::temp_dir().join("hybseg_dataset_example");
    let _ = std::fs::remove_dir_all(&root);
    let ids = numbered_ids(n);
    let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
    write_disk_dataset(&root, &ids, 48, 7)?;

    print!("{}", check_dataset(&root)?);
    let index = scan_dataset(&root)?;
    let (train, test) = split_dataset(&index, 0.9, 42)?;
    write_split_manifest(&root, &train, &test)?;
    println!("split {} / {}; manifests in {}", train.len(), test.len(), root.display());

    let src = DiskSource { index: train, norm: Normalization::from_config(&ModelConfig::default()) };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let batch = (0..4)
        .map(|i| Ok(augment(&src.load(i, (64, 64))?, &mut rng, RotationMode::Arbitrary, 30.0)))
        .collect::<hybseg::Result<Vec<_>>>()?;
    for s in &batch {
        println!("{}: {} foreground pixels", s.id, s.foreground_pixels());
    }
    let (x, y) = make_batch(&batch, DType::F32, &Device::Cpu)?;
    println!("batch images {:?}, masks {:?}", x.dims(), y.dims());
    Ok(())
}
