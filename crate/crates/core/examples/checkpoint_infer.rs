//! Trains briefly, keeps the best checkpoint, reloads it and writes masks for
//! new images at their original resolution.

use candle_core::DType;
use hybseg::data::synthetic::{random_disk_pairs, write_pairs};
use hybseg::data::{MemorySource, Normalization};
use hybseg::infer::{collect_inputs, infer_paths};
use hybseg::training::load_checkpoint;
use hybseg::{HybridSegmenter, ModelConfig, TrainConfig, Trainer};

fn main() -> hybseg::Result<()> {
    let dir = std::env::temp_dir().join("hybseg_checkpoint_example");
    let _ = std::fs::remove_dir_all(&dir);
    let cfg = ModelConfig::toy();
    let norm = Normalization::from_config(&cfg);
    let ids = ["a", "b", "c", "d", "e", "f"];
    let train = MemorySource { pairs: random_disk_pairs(&ids, 48, 1), norm };
    let tcfg = TrainConfig { max_epochs: 5, patience: 0, batch_size: 3, scale_set: vec![32], ..TrainConfig::default() };
    let mut trainer = Trainer::new(HybridSegmenter::new(&cfg, DType::F32, 0)?, &tcfg)?;
    let outcome = trainer.fit(&train, None, Some(&dir))?;
    for r in &outcome.history {
        println!("epoch {} loss {:.4} dsc {:.4}", r.epoch, r.train_loss, r.monitor_value);
    }

    let record = load_checkpoint(&dir.join("best.ckpt"))?;
    println!("best.ckpt: epoch {}, dsc {:.4}, {} tensors", record.epoch, record.monitored_value, record.tensors.len());
    let model = record.restore_model()?;

    let inputs = dir.join("new_images");
    write_pairs(&inputs, &random_disk_pairs(&["x", "y"], 80, 9))?;
    let files = collect_inputs(&inputs.join("images"))?;
    let summary = infer_paths(&model, &files, &dir.join("masks"), cfg.input_size, &norm, 0.5)?;
    for p in &summary.written {
        println!("wrote {}", p.display());
    }
    Ok(())
}
