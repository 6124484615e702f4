//! Pixel metrics: a hand-counted case, logits thresholding and aggregation.

use candle_core::{Device, Tensor};
use hybseg::metrics::{aggregate_report, confusion_counts, write_metrics_csv, ImageMetrics, METRIC_NAMES};
use hybseg::{compute_metrics, Aggregation, ConfusionCounts};

fn main() -> hybseg::Result<()> {
    let pred = [1, 1, 1, 0, 1, 1, 1, 0, 1, 1, 0, 0, 0, 0, 0, 0];
    let gt = [1, 1, 1, 0, 1, 1, 0, 1, 1, 0, 1, 0, 0, 0, 0, 0];
    let hand = ConfusionCounts::from_masks(&pred, &gt)?;
    println!("4x4 counts {hand:?}");
    let m = compute_metrics(&hand);
    for (name, v) in METRIC_NAMES.iter().zip(m.values()) {
        println!("  {name:9} {v:.4}");
    }

    // Logits are thresholded after a sigmoid.
    let logits = Tensor::new(&[[-2.0f64, 3.0], [0.1, -0.1]], &Device::Cpu)?;
    let target = Tensor::new(&[[0.0f64, 1.0], [0.0, 1.0]], &Device::Cpu)?;
    let soft = confusion_counts(&logits, &target, 0.5)?;
    println!("logit counts {soft:?}");

    // Per-image mean and pooled counts answer different questions.
    let counts = [hand, soft, ConfusionCounts::new(0, 0, 0, 16)];
    let reports: Vec<_> = counts.iter().map(compute_metrics).collect();
    for mode in [Aggregation::PerImageMean, Aggregation::GlobalCounts] {
        let r = aggregate_report(&reports, &counts, mode)?;
        println!("{:15} iou {:.4} dsc {:.4}", mode.name(), r.iou, r.dsc);
    }

    let images: Vec<_> = counts
        .iter()
        .zip(&reports)
        .enumerate()
        .map(|(i, (c, r))| ImageMetrics { image_id: format!("img{i}"), counts: *c, report: *r })
        .collect();
    let path = std::env::temp_dir().join("hybseg_metrics_example.csv");
    write_metrics_csv(&path, &images, &aggregate_report(&reports, &counts, Aggregation::PerImageMean)?)?;
    println!("wrote {}", path.display());
    Ok(())
}
