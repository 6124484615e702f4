//! Optimisation loop, evaluation and checkpointing.

use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{Device, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data::{augment, derive_seed, make_batch, SampleSource};
use crate::error::{Error, Result};
use crate::losses::{combined_loss, LossValue};
use crate::metrics::{
    aggregate_report, batch_confusion_counts, compute_metrics, Aggregation, ImageMetrics, MetricReport,
};
use crate::model::{HybridSegmenter, Segmenter};

pub mod checkpoint;
pub mod early_stop;
pub mod optimizer;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointRecord, NamedTensor};
pub use early_stop::{Decision, EarlyStopState};
pub use optimizer::AdamW;

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub bce: f64,
    pub iou_loss: f64,
    pub monitor_value: f64,
    pub lr: f64,
    pub seconds: f64,
}

/// Per-image results plus both aggregates.
#[derive(Debug, Clone)]
pub struct EvaluationReport {
    pub images: Vec<ImageMetrics>,
    pub per_image_mean: MetricReport,
    pub global: MetricReport,
}

impl EvaluationReport {
    pub fn aggregate(&self, mode: Aggregation) -> &MetricReport {
        match mode {
            Aggregation::GlobalCounts => &self.global,
            _ => &self.per_image_mean,
        }
    }
}

/// Evaluates a frozen model on every sample of `source` at `size`.
pub fn evaluate(
    model: &dyn Segmenter,
    source: &dyn SampleSource,
    size: (usize, usize),
    threshold: f64,
) -> Result<EvaluationReport> {
    if source.is_empty() {
        return Err(Error::Usage("cannot evaluate an empty split".into()));
    }
    let mut images = Vec::with_capacity(source.len());
    for i in 0..source.len() {
        let sample = source.load(i, size)?;
        let (x, y) = make_batch(std::slice::from_ref(&sample), candle_core::DType::F32, &Device::Cpu)?;
        let logits = model.predict(&x)?;
        let counts = batch_confusion_counts(&logits, &y, threshold)?[0];
        images.push(ImageMetrics {
            image_id: sample.id,
            counts,
            report: compute_metrics(&counts),
        });
    }
    let reports: Vec<_> = images.iter().map(|m| m.report).collect();
    let counts: Vec<_> = images.iter().map(|m| m.counts).collect();
    Ok(EvaluationReport {
        per_image_mean: aggregate_report(&reports, &counts, Aggregation::PerImageMean)?,
        global: aggregate_report(&reports, &counts, Aggregation::GlobalCounts)?,
        images,
    })
}

/// Result of [`Trainer::fit`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Option<CheckpointRecord>,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Owns the model, optimizer and early-stopping state of one training run.
#[derive(Debug)]
pub struct Trainer {
    model: HybridSegmenter,
    optimizer: AdamW,
    cfg: TrainConfig,
    early: EarlyStopState,
    epoch: usize,
    step: usize,
    history: Vec<EpochRecord>,
}

impl Trainer {
    pub fn new(model: HybridSegmenter, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let optimizer = AdamW::new(model.store().params(), cfg)?;
        Ok(Self {
            model,
            optimizer,
            cfg: cfg.clone(),
            early: EarlyStopState::new(cfg.patience, cfg.min_delta),
            epoch: 0,
            step: 0,
            history: Vec::new(),
        })
    }

    /// Continues a run from a checkpoint. `cfg` may raise `max_epochs`; the
    /// stored optimizer and early-stopping state are kept.
    pub fn resume(record: &CheckpointRecord, cfg: &TrainConfig) -> Result<Self> {
        let model = record.restore_model()?;
        let mut t = Self::new(model, cfg)?;
        let moments = t
            .optimizer
            .param_names()
            .map(|name| {
                let get = |prefix: &str| {
                    record
                        .tensor(&format!("{prefix}{name}"))
                        .ok_or_else(|| Error::Integrity(format!("checkpoint lacks optimizer state for `{name}`")))
                        .and_then(|nt| nt.to_tensor(&Device::Cpu))
                };
                Ok((get(checkpoint::MOMENT1_PREFIX)?, get(checkpoint::MOMENT2_PREFIX)?))
            })
            .collect::<Result<Vec<_>>>()?;
        t.optimizer.restore(record.optimizer_step, moments)?;
        t.early = record.early_stop.clone();
        t.epoch = record.epoch;
        Ok(t)
    }

    pub fn model(&self) -> &HybridSegmenter {
        &self.model
    }

    pub fn into_model(self) -> HybridSegmenter {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn optimizer(&self) -> &AdamW {
        &self.optimizer
    }

    pub fn early_stop(&self) -> &EarlyStopState {
        &self.early
    }

    /// Completed epochs, including those before a resume.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    /// One optimisation step on a batch. Aborts on a non-finite loss.
    pub fn train_step(&mut self, images: &Tensor, masks: &Tensor) -> Result<LossValue> {
        let logits = self.model.forward_train(images)?;
        let masks = masks.to_dtype(logits.dtype())?;
        let loss = combined_loss(&logits, &masks, self.cfg.loss_lambda)?;
        let value = loss.value(self.cfg.loss_lambda)?;
        self.step += 1;
        if !value.total.is_finite() {
            return Err(Error::NonFinite {
                epoch: self.epoch + 1,
                step: self.step,
                value: value.total,
            });
        }
        let grads = loss.total.backward()?;
        self.optimizer.step(&grads)?;
        Ok(value)
    }

    fn input_size_for(&self, rng: &mut ChaCha8Rng) -> (usize, usize) {
        if self.cfg.scale_set.is_empty() {
            self.model.config().input_size
        } else {
            let s = self.cfg.scale_set[rng.random_range(0..self.cfg.scale_set.len())];
            (s, s)
        }
    }

    /// One pass over `source` in a seeded order. Returns mean loss parts.
    pub fn train_epoch(&mut self, source: &dyn SampleSource) -> Result<LossValue> {
        if source.is_empty() {
            return Err(Error::Usage("training split is empty".into()));
        }
        let epoch = self.epoch + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, epoch as u64, "order"));
        let mut order: Vec<usize> = (0..source.len()).collect();
        order.shuffle(&mut rng);
        let (mut bce, mut iou, mut n) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(self.cfg.batch_size) {
            let size = self.input_size_for(&mut rng);
            let samples = chunk
                .iter()
                .map(|&i| {
                    let s = source.load(i, size)?;
                    if !self.cfg.augment {
                        return Ok(s);
                    }
                    let mut r = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, epoch as u64, source.id(i)));
                    Ok(augment(&s, &mut r, self.cfg.rotation, self.cfg.max_rotation_degrees))
                })
                .collect::<Result<Vec<_>>>()?;
            let (x, y) = make_batch(&samples, self.model.dtype(), &Device::Cpu)?;
            let v = self.train_step(&x, &y)?;
            bce += v.bce_part;
            iou += v.iou_part;
            n += 1;
        }
        self.epoch = epoch;
        let n = n as f64;
        Ok(LossValue::from_parts(bce / n, iou / n, self.cfg.loss_lambda))
    }

    /// Monitored metric of the current weights on `source`.
    pub fn monitor_value(&self, source: &dyn SampleSource) -> Result<f64> {
        let report = evaluate(
            &self.model,
            source,
            self.model.config().input_size,
            self.cfg.threshold,
        )?;
        Ok(report
            .per_image_mean
            .get(self.cfg.monitor.name())
            .expect("monitor names are metric names"))
    }

    /// Snapshot of weights, buffers, optimizer moments and run state.
    pub fn checkpoint(&self, monitored_value: f64) -> Result<CheckpointRecord> {
        let store = self.model.store();
        let mut tensors = Vec::new();
        for (name, var) in store.params().chain(store.buffers()) {
            tensors.push(NamedTensor::from_tensor(name, var.as_tensor())?);
        }
        for (i, name) in self.optimizer.param_names().enumerate() {
            let (m, v) = self.optimizer.moments(i);
            tensors.push(NamedTensor::from_tensor(format!("{}{name}", checkpoint::MOMENT1_PREFIX), m)?);
            tensors.push(NamedTensor::from_tensor(format!("{}{name}", checkpoint::MOMENT2_PREFIX), v)?);
        }
        Ok(CheckpointRecord {
            format_version: checkpoint::FORMAT_VERSION,
            model: self.model.config().clone(),
            train: self.cfg.clone(),
            epoch: self.epoch,
            monitored_value,
            optimizer_step: self.optimizer.step_count(),
            early_stop: self.early.clone(),
            tensors,
        })
    }

    /// Trains until `max_epochs` or early stop. The monitored metric is
    /// evaluated on `monitor` (or on `train` when absent) after every epoch.
    /// With an output directory, `history.csv`, `best.ckpt` and `last.ckpt`
    /// are kept up to date there.
    pub fn fit(
        &mut self,
        train: &dyn SampleSource,
        monitor: Option<&dyn SampleSource>,
        output: Option<&Path>,
    ) -> Result<TrainOutcome> {
        let monitor = monitor.unwrap_or(train);
        let paths = output.map(RunPaths::new);
        let mut best = None;
        let mut stopped_early = false;
        let first = self.history.len();
        while self.epoch < self.cfg.max_epochs {
            if self.early.decision() == Decision::Stop {
                stopped_early = true;
                break;
            }
            let start = Instant::now();
            let loss = self.train_epoch(train)?;
            let value = self.monitor_value(monitor)?;
            let decision = self.early.update(value, self.epoch)?;
            let record = EpochRecord {
                epoch: self.epoch,
                train_loss: loss.total,
                bce: loss.bce_part,
                iou_loss: loss.iou_part,
                monitor_value: value,
                lr: self.optimizer.lr,
                seconds: start.elapsed().as_secs_f64(),
            };
            log::info!(
                "epoch {} loss {:.5} (bce {:.5}, iou {:.5}) {} {:.4}",
                record.epoch,
                record.train_loss,
                record.bce,
                record.iou_loss,
                self.cfg.monitor.name(),
                value
            );
            self.history.push(record.clone());
            let improved = self.early.improved_at(self.epoch);
            if improved || paths.is_some() {
                let ckpt = self.checkpoint(value)?;
                if let Some(p) = &paths {
                    append_history(&p.history, std::slice::from_ref(&record))?;
                    save_checkpoint(&ckpt, &p.last)?;
                    if improved {
                        save_checkpoint(&ckpt, &p.best)?;
                    }
                }
                if improved {
                    best = Some(ckpt);
                }
            }
            if decision == Decision::Stop {
                stopped_early = true;
                break;
            }
        }
        Ok(TrainOutcome {
            best,
            history: self.history[first..].to_vec(),
            stopped_early,
        })
    }
}

/// Output files of a training run.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub history: PathBuf,
    pub best: PathBuf,
    pub last: PathBuf,
}

impl RunPaths {
    pub fn new(dir: &Path) -> Self {
        Self {
            history: dir.join("history.csv"),
            best: dir.join("best.ckpt"),
            last: dir.join("last.ckpt"),
        }
    }
}

/// Appends rows to a history CSV, writing the header if the file is new.
pub fn append_history(path: &Path, rows: &[EpochRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let exists = path.exists() && std::fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Parse {
            line: 0,
            message: format!("{}: {e}", path.display()),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a history CSV; malformed rows report their line number.
pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        line: 0,
        message: format!("{}: {e}", path.display()),
    })?;
    let mut rows = Vec::new();
    for rec in r.deserialize::<EpochRecord>() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: format!("{}: {e}", path.display()),
        })?;
        rows.push(rec);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: format!("{}: no data rows", path.display()),
        });
    }
    Ok(rows)
}
