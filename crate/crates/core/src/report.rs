//! Static plots and a plain-text summary from history and metrics CSVs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use imageproc::drawing::{draw_filled_rect_mut, draw_line_segment_mut};
use imageproc::rect::Rect;

use crate::error::{Error, Result};
use crate::metrics::{read_metrics_csv, METRIC_NAMES};
use crate::training::{read_history, EpochRecord};

const WIDTH: u32 = 640;
const HEIGHT: u32 = 400;
const MARGIN: u32 = 40;
const HIST_BINS: usize = 20;

const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([40, 40, 40]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const SERIES: Rgb<u8> = Rgb([31, 119, 180]);

/// Files written by [`run_report`].
#[derive(Debug, Clone, Default)]
pub struct ReportOutput {
    pub curves: Vec<PathBuf>,
    pub histograms: Vec<PathBuf>,
    pub summary: PathBuf,
    pub summary_text: String,
}

fn canvas() -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, BACKGROUND);
    for i in 0..=4 {
        let y = (MARGIN + i * (HEIGHT - 2 * MARGIN) / 4) as f32;
        draw_line_segment_mut(&mut img, (MARGIN as f32, y), ((WIDTH - MARGIN) as f32, y), GRID);
    }
    let (x0, y0) = (MARGIN as f32, (HEIGHT - MARGIN) as f32);
    draw_line_segment_mut(&mut img, (x0, y0), ((WIDTH - MARGIN) as f32, y0), AXIS);
    draw_line_segment_mut(&mut img, (x0, y0), (x0, MARGIN as f32), AXIS);
    img
}

fn value_range(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if (hi - lo).abs() < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Line plot of `values` against their index.
pub fn render_curve(values: &[f64]) -> RgbImage {
    let mut img = canvas();
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return img;
    }
    let (lo, hi) = value_range(&finite);
    let span_x = (WIDTH - 2 * MARGIN) as f64;
    let span_y = (HEIGHT - 2 * MARGIN) as f64;
    let n = values.len().max(2) - 1;
    let point = |i: usize, v: f64| {
        (
            (MARGIN as f64 + span_x * i as f64 / n as f64) as f32,
            ((HEIGHT - MARGIN) as f64 - span_y * (v - lo) / (hi - lo)) as f32,
        )
    };
    if values.len() == 1 {
        let (x, y) = point(0, values[0]);
        draw_filled_rect_mut(&mut img, Rect::at(x as i32 - 2, y as i32 - 2).of_size(5, 5), SERIES);
    }
    for (i, w) in values.windows(2).enumerate() {
        if w[0].is_finite() && w[1].is_finite() {
            draw_line_segment_mut(&mut img, point(i, w[0]), point(i + 1, w[1]), SERIES);
        }
    }
    img
}

/// Counts of `values` in equal bins over `[0, 1]`.
pub fn histogram(values: &[f64], bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    for &v in values.iter().filter(|v| v.is_finite()) {
        let b = ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
}

/// Bar chart of a metric distribution over `[0, 1]`.
pub fn render_histogram(values: &[f64]) -> RgbImage {
    let mut img = canvas();
    let counts = histogram(values, HIST_BINS);
    let max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bar_w = (WIDTH - 2 * MARGIN) / HIST_BINS as u32;
    let span_y = (HEIGHT - 2 * MARGIN) as f64;
    for (i, &c) in counts.iter().enumerate() {
        let h = (span_y * c as f64 / max).round() as u32;
        if h == 0 {
            continue;
        }
        let x = MARGIN + i as u32 * bar_w + 1;
        let y = HEIGHT - MARGIN - h;
        draw_filled_rect_mut(&mut img, Rect::at(x as i32, y as i32).of_size(bar_w - 2, h), SERIES);
    }
    img
}

fn save(img: &RgbImage, path: PathBuf) -> Result<PathBuf> {
    img.save(&path)?;
    Ok(path)
}

fn history_summary(rows: &[EpochRecord], out: &mut String) {
    let best = rows
        .iter()
        .max_by(|a, b| a.monitor_value.total_cmp(&b.monitor_value))
        .expect("history is non-empty");
    let last = rows.last().expect("history is non-empty");
    let _ = writeln!(out, "epochs: {}", rows.len());
    let _ = writeln!(out, "best_epoch: {}", best.epoch);
    let _ = writeln!(out, "best_monitor_value: {}", best.monitor_value);
    let _ = writeln!(out, "final_train_loss: {}", last.train_loss);
    let _ = writeln!(out, "final_bce: {}", last.bce);
    let _ = writeln!(out, "final_iou_loss: {}", last.iou_loss);
}

/// Renders curves for every history series and a histogram for every metric
/// column, and writes `summary.txt`. At least one input is required.
pub fn run_report(history: Option<&Path>, metrics: Option<&Path>, out_dir: &Path) -> Result<ReportOutput> {
    if history.is_none() && metrics.is_none() {
        return Err(Error::Usage("report needs a history CSV, a metrics CSV or both".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut out = ReportOutput::default();
    let mut text = String::new();
    if let Some(path) = history {
        let rows = read_history(path)?;
        let series: [(&str, fn(&EpochRecord) -> f64); 4] = [
            ("train_loss", |r| r.train_loss),
            ("bce", |r| r.bce),
            ("iou_loss", |r| r.iou_loss),
            ("monitor_value", |r| r.monitor_value),
        ];
        for (name, f) in series {
            let values: Vec<f64> = rows.iter().map(f).collect();
            out.curves
                .push(save(&render_curve(&values), out_dir.join(format!("curve_{name}.png")))?);
        }
        let _ = writeln!(text, "[history] {}", path.display());
        history_summary(&rows, &mut text);
    }
    if let Some(path) = metrics {
        let table = read_metrics_csv(path)?;
        for name in METRIC_NAMES {
            let values = table.column(name).expect("known metric");
            out.histograms
                .push(save(&render_histogram(&values), out_dir.join(format!("hist_{name}.png")))?);
        }
        let agg = match table.aggregate {
            Some(a) => a,
            None => {
                let n = table.rows.len() as f64;
                let mut m = [0.0; 7];
                for (_, v) in &table.rows {
                    for (a, b) in m.iter_mut().zip(v) {
                        *a += b / n;
                    }
                }
                m
            }
        };
        let _ = writeln!(text, "[metrics] {}", path.display());
        let _ = writeln!(text, "images: {}", table.rows.len());
        for (name, v) in METRIC_NAMES.iter().zip(agg) {
            let _ = writeln!(text, "{name}: {v}");
        }
    }
    out.summary = out_dir.join("summary.txt");
    std::fs::write(&out.summary, &text).map_err(|e| Error::io(&out.summary, e))?;
    out.summary_text = text;
    Ok(out)
}
