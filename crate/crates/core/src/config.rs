//! Model, training and run configuration.
//!
//! All three configs share one flat `key = value` text format. Lines starting
//! with `#` are comments, lists are comma separated and sizes are written
//! `HxW`. Every key accepted by [`RunConfig::set`] is listed in
//! [`RunConfig::KEYS`] and echoed by [`RunConfig::to_kv_string`], so a resolved
//! echo can be fed back as a config file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::Aggregation;

/// Smallest input side accepted by the model (one token at the deepest stage).
pub const MIN_INPUT_SIDE: usize = 32;
/// Total downsampling factor from input to the deepest stage.
pub const ENCODER_STRIDE: usize = 32;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub num_classes: usize,
    pub window_size: usize,
    pub stage_depths: [usize; 4],
    pub stage_heads: [usize; 4],
    pub mlp_ratio: f64,
    pub decoder_widths: [usize; 4],
    pub input_size: (usize, usize),
    pub norm_mean: [f32; 3],
    pub norm_std: [f32; 3],
    /// Optional checkpoint whose `encoder.*` tensors initialise the backbone.
    pub pretrained_backbone: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_channels: 96,
            num_classes: 1,
            window_size: 11,
            stage_depths: [2, 2, 6, 2],
            stage_heads: [3, 6, 12, 24],
            mlp_ratio: 4.0,
            decoder_widths: [64, 128, 256, 512],
            input_size: (352, 352),
            norm_mean: [0.485, 0.456, 0.406],
            norm_std: [0.229, 0.224, 0.225],
            pretrained_backbone: None,
        }
    }
}

impl ModelConfig {
    /// Small configuration used by tests and examples: 32x32 input, C=8,
    /// one block per stage.
    pub fn toy() -> Self {
        Self {
            base_channels: 8,
            window_size: 4,
            stage_depths: [1, 1, 1, 1],
            stage_heads: [1, 1, 2, 2],
            mlp_ratio: 2.0,
            decoder_widths: [8, 8, 8, 8],
            input_size: (32, 32),
            ..Self::default()
        }
    }

    /// Channel count of encoder stage `stage` (1-based).
    pub fn stage_channels(&self, stage: usize) -> usize {
        self.base_channels << (stage - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::Parameter(format!("{name} must be positive")))
            } else {
                Ok(())
            }
        };
        positive("base_channels", self.base_channels)?;
        positive("num_classes", self.num_classes)?;
        positive("window_size", self.window_size)?;
        for i in 0..4 {
            positive("stage_depths", self.stage_depths[i])?;
            positive("stage_heads", self.stage_heads[i])?;
            positive("decoder_widths", self.decoder_widths[i])?;
            let ch = self.stage_channels(i + 1);
            if ch % self.stage_heads[i] != 0 {
                return Err(Error::Parameter(format!(
                    "stage {} has {ch} channels, not divisible by {} heads",
                    i + 1,
                    self.stage_heads[i]
                )));
            }
        }
        if !(self.mlp_ratio > 0.0) {
            return Err(Error::Parameter("mlp_ratio must be positive".into()));
        }
        if self.norm_std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Parameter("norm_std entries must be positive".into()));
        }
        check_input_size(self.input_size.0, self.input_size.1)
    }

    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (line, key, value) in parse_kv(text)? {
            if !cfg.set(&key, &value).map_err(|e| at_line(line, e))? {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown model key `{key}`"),
                });
            }
        }
        Ok(cfg)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("base_channels", self.base_channels.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("window_size", self.window_size.to_string()),
            ("stage_depths", join(&self.stage_depths)),
            ("stage_heads", join(&self.stage_heads)),
            ("mlp_ratio", self.mlp_ratio.to_string()),
            ("decoder_widths", join(&self.decoder_widths)),
            (
                "input_size",
                format!("{}x{}", self.input_size.0, self.input_size.1),
            ),
            ("norm_mean", join(&self.norm_mean)),
            ("norm_std", join(&self.norm_std)),
            ("pretrained_backbone", opt_path(&self.pretrained_backbone)),
        ]
    }

    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "base_channels" => self.base_channels = parse_value(key, value)?,
            "num_classes" => self.num_classes = parse_value(key, value)?,
            "window_size" => self.window_size = parse_value(key, value)?,
            "stage_depths" => self.stage_depths = parse_array(key, value)?,
            "stage_heads" => self.stage_heads = parse_array(key, value)?,
            "mlp_ratio" => self.mlp_ratio = parse_value(key, value)?,
            "decoder_widths" => self.decoder_widths = parse_array(key, value)?,
            "input_size" => self.input_size = parse_size(key, value)?,
            "norm_mean" => self.norm_mean = parse_array(key, value)?,
            "norm_std" => self.norm_std = parse_array(key, value)?,
            "pretrained_backbone" => self.pretrained_backbone = parse_opt_path(value),
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Checks that an input size is usable by the four-stage encoder.
pub fn check_input_size(height: usize, width: usize) -> Result<()> {
    for (axis, v) in [("height", height), ("width", width)] {
        if v < MIN_INPUT_SIDE {
            return Err(Error::dim(
                axis,
                format!("{v} is below the minimum input side {MIN_INPUT_SIDE}"),
            ));
        }
        if v % ENCODER_STRIDE != 0 {
            return Err(Error::dim(
                axis,
                format!("{v} is not divisible by {ENCODER_STRIDE}"),
            ));
        }
    }
    Ok(())
}

/// Metric watched by early stopping and best-checkpoint selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monitor {
    Dsc,
    Iou,
    Precision,
    Recall,
    Accuracy,
    F1,
    F2,
}

impl Monitor {
    pub fn name(self) -> &'static str {
        match self {
            Monitor::Dsc => "dsc",
            Monitor::Iou => "iou",
            Monitor::Precision => "precision",
            Monitor::Recall => "recall",
            Monitor::Accuracy => "accuracy",
            Monitor::F1 => "f1",
            Monitor::F2 => "f2",
        }
    }
}

impl FromStr for Monitor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "dsc" | "dice" => Monitor::Dsc,
            "iou" => Monitor::Iou,
            "precision" => Monitor::Precision,
            "recall" => Monitor::Recall,
            "accuracy" => Monitor::Accuracy,
            "f1" => Monitor::F1,
            "f2" => Monitor::F2,
            other => return Err(Error::Parameter(format!("unknown monitor `{other}`"))),
        })
    }
}

/// Rotation policy of the training augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RotationMode {
    None,
    /// Multiples of 90 degrees; exact on masks.
    Quarter,
    /// Uniform angle in `[-max_rotation_degrees, max_rotation_degrees]`.
    Arbitrary,
}

impl RotationMode {
    pub fn name(self) -> &'static str {
        match self {
            RotationMode::None => "none",
            RotationMode::Quarter => "quarter",
            RotationMode::Arbitrary => "arbitrary",
        }
    }
}

impl FromStr for RotationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => RotationMode::None,
            "quarter" | "90" => RotationMode::Quarter,
            "arbitrary" => RotationMode::Arbitrary,
            other => return Err(Error::Parameter(format!("unknown rotation `{other}`"))),
        })
    }
}

/// Optimisation and data-pipeline hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub loss_lambda: f64,
    /// Square input sides drawn per iteration. Empty means `input_size` only.
    pub scale_set: Vec<usize>,
    pub seed: u64,
    pub monitor: Monitor,
    pub min_delta: f64,
    pub val_fraction: f64,
    pub monitor_test: bool,
    pub grad_clip: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub train_fraction: f64,
    pub threshold: f64,
    pub augment: bool,
    pub rotation: RotationMode,
    pub max_rotation_degrees: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            batch_size: 8,
            max_epochs: 100,
            patience: 37,
            loss_lambda: 1.0,
            scale_set: vec![256, 352, 448],
            seed: 42,
            monitor: Monitor::Dsc,
            min_delta: 1e-4,
            val_fraction: 0.1,
            monitor_test: false,
            grad_clip: None,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            train_fraction: 0.9,
            threshold: 0.5,
            augment: true,
            rotation: RotationMode::Quarter,
            max_rotation_degrees: 180.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Parameter("learning_rate must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Parameter("weight_decay must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be at least 1".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Parameter(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.loss_lambda > 0.0) {
            return Err(Error::Parameter("loss_lambda must be positive".into()));
        }
        for &s in &self.scale_set {
            check_input_size(s, s)?;
        }
        for (name, f) in [
            ("val_fraction", self.val_fraction),
            ("train_fraction", self.train_fraction),
            ("threshold", self.threshold),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Parameter(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Parameter("betas must lie in [0, 1)".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Parameter("grad_clip must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (line, key, value) in parse_kv(text)? {
            if !cfg.set(&key, &value).map_err(|e| at_line(line, e))? {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown training key `{key}`"),
                });
            }
        }
        Ok(cfg)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("learning_rate", self.learning_rate.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("loss_lambda", self.loss_lambda.to_string()),
            ("scale_set", join(&self.scale_set)),
            ("seed", self.seed.to_string()),
            ("monitor", self.monitor.name().to_string()),
            ("min_delta", self.min_delta.to_string()),
            ("val_fraction", self.val_fraction.to_string()),
            ("monitor_test", self.monitor_test.to_string()),
            (
                "grad_clip",
                self.grad_clip.map(|c| c.to_string()).unwrap_or_default(),
            ),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            ("threshold", self.threshold.to_string()),
            ("augment", self.augment.to_string()),
            ("rotation", self.rotation.name().to_string()),
            (
                "max_rotation_degrees",
                self.max_rotation_degrees.to_string(),
            ),
        ]
    }

    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "max_epochs" => self.max_epochs = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "loss_lambda" => self.loss_lambda = parse_value(key, value)?,
            "scale_set" => self.scale_set = parse_list(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "monitor" => self.monitor = value.parse()?,
            "min_delta" => self.min_delta = parse_value(key, value)?,
            "val_fraction" => self.val_fraction = parse_value(key, value)?,
            "monitor_test" => self.monitor_test = parse_value(key, value)?,
            "grad_clip" => {
                self.grad_clip = if value.is_empty() || value == "none" {
                    None
                } else {
                    Some(parse_value(key, value)?)
                }
            }
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "adam_eps" => self.adam_eps = parse_value(key, value)?,
            "train_fraction" => self.train_fraction = parse_value(key, value)?,
            "threshold" => self.threshold = parse_value(key, value)?,
            "augment" => self.augment = parse_value(key, value)?,
            "rotation" => self.rotation = value.parse()?,
            "max_rotation_degrees" => self.max_rotation_degrees = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Fully resolved configuration of one CLI invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dataset_root: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub split_manifest: Option<PathBuf>,
    pub history_csv: Option<PathBuf>,
    pub metrics_csv: Option<PathBuf>,
    pub frames: usize,
    pub warmup: usize,
    pub aggregation: Aggregation,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            dataset_root: None,
            output_dir: PathBuf::from("out"),
            checkpoint: None,
            input: None,
            split_manifest: None,
            history_csv: None,
            metrics_csv: None,
            frames: 100,
            warmup: 10,
            aggregation: Aggregation::PerImageMean,
        }
    }
}

impl RunConfig {
    /// Every documented key, in echo order.
    pub const KEYS: &'static [&'static str] = &[
        "base_channels",
        "num_classes",
        "window_size",
        "stage_depths",
        "stage_heads",
        "mlp_ratio",
        "decoder_widths",
        "input_size",
        "norm_mean",
        "norm_std",
        "pretrained_backbone",
        "learning_rate",
        "weight_decay",
        "batch_size",
        "max_epochs",
        "patience",
        "loss_lambda",
        "scale_set",
        "seed",
        "monitor",
        "min_delta",
        "val_fraction",
        "monitor_test",
        "grad_clip",
        "beta1",
        "beta2",
        "adam_eps",
        "train_fraction",
        "threshold",
        "augment",
        "rotation",
        "max_rotation_degrees",
        "dataset_root",
        "output_dir",
        "checkpoint",
        "input",
        "split_manifest",
        "history_csv",
        "metrics_csv",
        "frames",
        "warmup",
        "aggregation",
    ];

    /// Sets one key. Unknown keys are a usage error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        if self.model.set(key, value)? || self.train.set(key, value)? {
            return Ok(());
        }
        match key {
            "dataset_root" => self.dataset_root = parse_opt_path(value),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "checkpoint" => self.checkpoint = parse_opt_path(value),
            "input" => self.input = parse_opt_path(value),
            "split_manifest" => self.split_manifest = parse_opt_path(value),
            "history_csv" => self.history_csv = parse_opt_path(value),
            "metrics_csv" => self.metrics_csv = parse_opt_path(value),
            "frames" => self.frames = parse_value(key, value)?,
            "warmup" => self.warmup = parse_value(key, value)?,
            "aggregation" => self.aggregation = value.parse()?,
            other => return Err(Error::Usage(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Layers defaults, then `file_text` (if any), then `overrides` in order.
    pub fn resolve(file_text: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(text) = file_text {
            for (line, key, value) in parse_kv(text)? {
                cfg.set(&key, &value).map_err(|e| at_line(line, e))?;
            }
        }
        for (key, value) in overrides {
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn load_file(path: &Path) -> Result<String> {
        std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out = self.model.entries();
        out.extend(self.train.entries());
        out.extend([
            ("dataset_root", opt_path(&self.dataset_root)),
            ("output_dir", self.output_dir.display().to_string()),
            ("checkpoint", opt_path(&self.checkpoint)),
            ("input", opt_path(&self.input)),
            ("split_manifest", opt_path(&self.split_manifest)),
            ("history_csv", opt_path(&self.history_csv)),
            ("metrics_csv", opt_path(&self.metrics_csv)),
            ("frames", self.frames.to_string()),
            ("warmup", self.warmup.to_string()),
            ("aggregation", self.aggregation.name().to_string()),
        ]);
        out
    }

    pub fn to_kv_string(&self) -> String {
        let mut out = String::from("# resolved configuration\n");
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Writes the resolved echo to `<output_dir>/resolved_config.txt`.
    pub fn write_echo(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.output_dir).map_err(|e| Error::io(&self.output_dir, e))?;
        let path = self.output_dir.join("resolved_config.txt");
        std::fs::write(&path, self.to_kv_string()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Parses `key = value` lines into `(line_number, key, value)` triples.
pub fn parse_kv(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: idx + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Parse {
                line: idx + 1,
                message: "empty key".into(),
            });
        }
        out.push((idx + 1, key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Splits a `key=value` command-line override.
pub fn parse_override(arg: &str) -> Result<(String, String)> {
    let (k, v) = arg
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override `{arg}` is not of the form key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn at_line(line: usize, err: Error) -> Error {
    match err {
        Error::Parse { .. } => err,
        other => Error::Parse {
            line,
            message: other.to_string(),
        },
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Parameter(format!("invalid value `{value}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_value(key, v)).collect()
}

fn parse_array<T: FromStr + Copy, const N: usize>(key: &str, value: &str) -> Result<[T; N]> {
    let items: Vec<T> = parse_list(key, value)?;
    items
        .try_into()
        .map_err(|_| Error::Parameter(format!("`{key}` needs exactly {N} values")))
}

fn parse_size(key: &str, value: &str) -> Result<(usize, usize)> {
    let (h, w) = value
        .split_once(['x', 'X', ','])
        .unwrap_or((value, value));
    Ok((parse_value(key, h)?, parse_value(key, w)?))
}

fn parse_opt_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn join<T: ToString>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}
