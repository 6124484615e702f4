//! Renders training curves, metric histograms and a summary from CSV files.

use hybseg::metrics::{write_metrics_csv, ImageMetrics};
use hybseg::report::run_report;
use hybseg::training::{append_history, EpochRecord};
use hybseg::{compute_metrics, ConfusionCounts};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("hybseg_report_example");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir)?;

    let history: Vec<_> = (1..=60)
        .map(|e| {
            let t = e as f64;
            EpochRecord {
                epoch: e,
                train_loss: 0.2 + 1.2 / t.sqrt(),
                bce: 0.1 + 0.5 / t.sqrt(),
                iou_loss: 0.1 + 0.7 / t.sqrt(),
                monitor_value: 0.9 - 0.6 / t,
                lr: 1e-4,
                seconds: 30.0,
            }
        })
        .collect();
    append_history(&dir.join("history.csv"), &history)?;

    let images: Vec<_> = (0..40u64)
        .map(|i| {
            let counts = ConfusionCounts::new(800 + 13 * i, 40 + (i * 7) % 60, 30 + (i * 11) % 80, 3000);
            ImageMetrics { image_id: format!("{i:03}"), counts, report: compute_metrics(&counts) }
        })
        .collect();
    let total = compute_metrics(&images.iter().map(|m| m.counts).sum());
    write_metrics_csv(&dir.join("metrics.csv"), &images, &total)?;

    let out = run_report(Some(&dir.join("history.csv")), Some(&dir.join("metrics.csv")), &dir.join("plots"))?;
    print!("{}", out.summary_text);
    println!("{} curves, {} histograms in {}", out.curves.len(), out.histograms.len(), dir.join("plots").display());
    Ok(())
}
