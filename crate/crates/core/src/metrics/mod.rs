//! Pixel-level evaluation metrics for binary masks.
//!
//! All metrics derive from a [`ConfusionCounts`] tuple. When a denominator is
//! zero the metric is 1 if nothing could have gone wrong (no false positives
//! and no false negatives), else 0.

use std::str::FromStr;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod fps;
pub mod io;

pub use fps::{benchmark_segmenter, fps_benchmark, FpsReport};
pub use io::{
    read_metrics_csv, write_metrics_csv, write_metrics_json, ImageMetrics, MetricsTable, AGGREGATE_ID,
};

/// Pixel counts of a prediction against ground truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Counts from two binary masks of equal length (non-zero = foreground).
    pub fn from_masks(pred: &[u8], gt: &[u8]) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(Error::dim(
                "pixels",
                format!("prediction has {} pixels, ground truth {}", pred.len(), gt.len()),
            ));
        }
        let mut c = Self::default();
        for (&p, &g) in pred.iter().zip(gt) {
            match (p != 0, g != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_, self.tn + o.tn)
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

/// How per-image results are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregation {
    /// Average each metric over images.
    PerImageMean,
    /// Sum counts over images, then compute metrics once.
    GlobalCounts,
    /// A single image, not aggregated.
    Single,
}

impl Aggregation {
    pub fn name(self) -> &'static str {
        match self {
            Aggregation::PerImageMean => "per-image-mean",
            Aggregation::GlobalCounts => "global-counts",
            Aggregation::Single => "single",
        }
    }
}

impl FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-image-mean" | "mean" => Ok(Aggregation::PerImageMean),
            "global-counts" | "global" => Ok(Aggregation::GlobalCounts),
            "single" => Ok(Aggregation::Single),
            other => Err(Error::Parameter(format!("unknown aggregation `{other}`"))),
        }
    }
}

/// Metric values of one image or an aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub iou: f64,
    pub dsc: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub f2: f64,
    pub fps: Option<f64>,
    pub n_images: usize,
    pub aggregation: Aggregation,
}

impl MetricReport {
    /// The seven metric values in CSV column order.
    pub fn values(&self) -> [f64; 7] {
        [
            self.iou,
            self.dsc,
            self.precision,
            self.recall,
            self.accuracy,
            self.f1,
            self.f2,
        ]
    }

    /// Value of a named metric (`iou`, `dsc`, `precision`, ...).
    pub fn get(&self, name: &str) -> Option<f64> {
        let idx = METRIC_NAMES.iter().position(|n| *n == name)?;
        Some(self.values()[idx])
    }
}

/// Metric column names in output order.
pub const METRIC_NAMES: [&str; 7] = ["iou", "dsc", "precision", "recall", "accuracy", "f1", "f2"];

fn ratio(num: u64, den: u64, vacuous: bool) -> f64 {
    if den == 0 {
        if vacuous {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

/// Evaluates IoU, DSC, precision, recall, accuracy, F1 and F2 from counts.
pub fn compute_metrics(c: &ConfusionCounts) -> MetricReport {
    let clean = c.fp == 0 && c.fn_ == 0;
    let iou = ratio(c.tp, c.tp + c.fp + c.fn_, clean);
    let dsc = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, clean);
    let precision = ratio(c.tp, c.tp + c.fp, clean);
    let recall = ratio(c.tp, c.tp + c.fn_, clean);
    let accuracy = ratio(c.tp + c.tn, c.total(), true);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let f2 = if 4.0 * precision + recall > 0.0 {
        5.0 * precision * recall / (4.0 * precision + recall)
    } else {
        0.0
    };
    MetricReport {
        iou,
        dsc,
        precision,
        recall,
        accuracy,
        f1,
        f2,
        fps: None,
        n_images: 1,
        aggregation: Aggregation::Single,
    }
}

/// Combines per-image reports (per-image mean) or counts (global counts).
pub fn aggregate_report(
    reports: &[MetricReport],
    counts: &[ConfusionCounts],
    mode: Aggregation,
) -> Result<MetricReport> {
    match mode {
        Aggregation::PerImageMean => {
            if reports.is_empty() {
                return Err(Error::Usage("cannot aggregate an empty list of reports".into()));
            }
            let n = reports.len() as f64;
            let mut sums = [0.0; 7];
            for r in reports {
                for (s, v) in sums.iter_mut().zip(r.values()) {
                    *s += v;
                }
            }
            let m = sums.map(|s| s / n);
            Ok(MetricReport {
                iou: m[0],
                dsc: m[1],
                precision: m[2],
                recall: m[3],
                accuracy: m[4],
                f1: m[5],
                f2: m[6],
                fps: None,
                n_images: reports.len(),
                aggregation: mode,
            })
        }
        Aggregation::GlobalCounts => {
            if counts.is_empty() {
                return Err(Error::Usage("cannot aggregate an empty list of counts".into()));
            }
            let total: ConfusionCounts = counts.iter().copied().sum();
            Ok(MetricReport {
                n_images: counts.len(),
                aggregation: mode,
                ..compute_metrics(&total)
            })
        }
        Aggregation::Single => Err(Error::Usage(
            "`single` is not an aggregation mode".into(),
        )),
    }
}

/// Binarises logits: a pixel is foreground iff `sigmoid(logit) > threshold`.
/// Ties go to background.
pub fn binarize_logits(logits: &[f64], threshold: f64) -> Vec<u8> {
    logits
        .iter()
        .map(|&x| u8::from(1.0 / (1.0 + (-x).exp()) > threshold))
        .collect()
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("threshold {threshold} outside (0, 1)")))
    }
}

/// Counts over a whole logit tensor against a `{0,1}` mask of the same shape.
pub fn confusion_counts(logits: &Tensor, gt: &Tensor, threshold: f64) -> Result<ConfusionCounts> {
    check_threshold(threshold)?;
    if logits.dims() != gt.dims() {
        return Err(Error::dim(
            "mask",
            format!("logits {:?} vs ground truth {:?}", logits.dims(), gt.dims()),
        ));
    }
    let l: Vec<f64> = logits.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    let g: Vec<f64> = gt.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    let g: Vec<u8> = g.iter().map(|&v| u8::from(v > 0.5)).collect();
    ConfusionCounts::from_masks(&binarize_logits(&l, threshold), &g)
}

/// Per-image counts of a `(B, 1, H, W)` logit batch.
pub fn batch_confusion_counts(
    logits: &Tensor,
    gt: &Tensor,
    threshold: f64,
) -> Result<Vec<ConfusionCounts>> {
    let (b, k, _, _) = logits.dims4()?;
    if k != 1 {
        return Err(Error::Usage(format!(
            "binary metrics need a single logit channel, got {k}"
        )));
    }
    if gt.dims4()?.0 != b {
        return Err(Error::dim("batch", "logit and mask batch sizes differ"));
    }
    (0..b)
        .map(|i| confusion_counts(&logits.get(i)?, &gt.get(i)?, threshold))
        .collect()
}
