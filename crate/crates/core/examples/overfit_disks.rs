//! Memorises eight disk images with the standard recipe (AdamW, lr 1e-4,
//! BCE + soft IoU). A quick end-to-end sanity check of the training stack.
//!
//! cargo run --release --example overfit_disks -- 200

use candle_core::DType;
use hybseg::data::synthetic::large_disk_pairs;
use hybseg::data::{MemorySource, Normalization};
use hybseg::{evaluate, HybridSegmenter, ModelConfig, TrainConfig, Trainer};

fn main() -> hybseg::Result<()> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse().expect("steps")).unwrap_or(200);
    let cfg = ModelConfig { base_channels: 32, decoder_widths: [128; 4], ..ModelConfig::toy() };
    let ids = ["d0", "d1", "d2", "d3", "d4", "d5", "d6", "d7"];
    let src = MemorySource { pairs: large_disk_pairs(&ids, 32), norm: Normalization::from_config(&cfg) };
    let train = TrainConfig {
        learning_rate: 1e-4,
        batch_size: 8,
        max_epochs: steps,
        patience: 0,
        scale_set: vec![],
        augment: false,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(HybridSegmenter::new(&cfg, DType::F32, 0)?, &train)?;
    for step in 1..=steps {
        let loss = trainer.train_epoch(&src)?;
        if step % 20 == 0 || step == steps {
            let dsc = evaluate(trainer.model(), &src, (32, 32), 0.5)?.per_image_mean.dsc;
            println!("step {step:4}  loss {:.4} (bce {:.4}, iou {:.4})  train DSC {dsc:.4}", loss.total, loss.bce_part, loss.iou_part);
        }
    }
    Ok(())
}
