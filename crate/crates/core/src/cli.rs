//! Command-line front end. Exit codes: 0 success, 1 validation or usage
//! failure, 2 internal error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use candle_core::DType;
use clap::{Args, Parser, Subcommand};

use crate::config::{parse_override, RunConfig};
use crate::data::{
    check_dataset, read_split_manifest, scan_dataset, split_dataset, write_split_manifest, DiskSource,
    Normalization,
};
use crate::error::{Error, Result};
use crate::infer::{collect_inputs, infer_paths};
use crate::metrics::{benchmark_segmenter, write_metrics_csv, write_metrics_json};
use crate::model::HybridSegmenter;
use crate::report::run_report;
use crate::training::{evaluate, load_checkpoint, Trainer};

#[derive(Debug, Parser)]
#[command(name = "hybseg", version, about = "Transformer/CNN polyp segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train (or resume with --checkpoint) on a dataset root.
    Train(CommonArgs),
    /// Evaluate a checkpoint and write per-image metrics.
    Eval(CommonArgs),
    /// Write predicted masks for an image or a directory of images.
    Infer(CommonArgs),
    /// Measure inference throughput.
    Bench(CommonArgs),
    /// Render plots and a summary from history/metrics CSVs.
    Report(CommonArgs),
    /// Validate a dataset root.
    DatasetCheck(CommonArgs),
}

/// Flags shared by every subcommand. Flags override `--config`, which
/// overrides built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset_root: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Monitor the test split for early stopping instead of a validation split.
    #[arg(long)]
    pub monitor_test: bool,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Image file or directory for `infer`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// History CSV for `report`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Metrics CSV for `report` (or output path for `eval`).
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Any configuration key, `--set key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl CommonArgs {
    /// Overrides in application order: `--set` pairs, then dedicated flags.
    pub fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut out = self
            .set
            .iter()
            .map(|s| parse_override(s))
            .collect::<Result<Vec<_>>>()?;
        let path = |p: &PathBuf| p.display().to_string();
        let flags = [
            ("dataset_root", self.dataset_root.as_ref().map(path)),
            ("output_dir", self.output_dir.as_ref().map(path)),
            ("checkpoint", self.checkpoint.as_ref().map(path)),
            ("seed", self.seed.map(|v| v.to_string())),
            ("threshold", self.threshold.map(|v| v.to_string())),
            ("monitor_test", self.monitor_test.then(|| "true".to_string())),
            ("frames", self.frames.map(|v| v.to_string())),
            ("warmup", self.warmup.map(|v| v.to_string())),
            ("input", self.input.as_ref().map(path)),
            ("history_csv", self.history.as_ref().map(path)),
            ("metrics_csv", self.metrics.as_ref().map(path)),
        ];
        out.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
        Ok(out)
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let text = self.config.as_deref().map(RunConfig::load_file).transpose()?;
        let cfg = RunConfig::resolve(text.as_deref(), &self.overrides()?)?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                1
            } else {
                2
            }
        }
    }
}

fn dispatch(cmd: &Command) -> Result<i32> {
    let args = match cmd {
        Command::Train(a)
        | Command::Eval(a)
        | Command::Infer(a)
        | Command::Bench(a)
        | Command::Report(a)
        | Command::DatasetCheck(a) => a,
    };
    let cfg = args.resolve()?;
    cfg.write_echo()?;
    match cmd {
        Command::Train(_) => cmd_train(&cfg),
        Command::Eval(_) => cmd_eval(&cfg),
        Command::Infer(_) => cmd_infer(&cfg),
        Command::Bench(_) => cmd_bench(&cfg),
        Command::Report(_) => cmd_report(&cfg),
        Command::DatasetCheck(_) => cmd_dataset_check(&cfg),
    }
}

fn require<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Usage(format!("missing {what}")))
}

fn load_model(cfg: &RunConfig) -> Result<HybridSegmenter> {
    let path = require(&cfg.checkpoint, "--checkpoint")?;
    load_checkpoint(path)?.restore_model()
}

fn cmd_train(cfg: &RunConfig) -> Result<i32> {
    let root = require(&cfg.dataset_root, "--dataset-root")?;
    let index = scan_dataset(root)?;
    let (train, test) = match &cfg.split_manifest {
        Some(dir) => read_split_manifest(dir, &index)?,
        None => split_dataset(&index, cfg.train.train_fraction, cfg.train.seed)?,
    };
    write_split_manifest(&cfg.output_dir, &train, &test)?;
    let (fit, monitor) = if cfg.train.monitor_test {
        (train, test)
    } else {
        split_dataset(&train, 1.0 - cfg.train.val_fraction, cfg.train.seed)?
    };
    if fit.is_empty() || monitor.is_empty() {
        return Err(Error::Usage(format!(
            "split left {} training and {} monitoring records",
            fit.len(),
            monitor.len()
        )));
    }
    let norm = Normalization::from_config(&cfg.model);
    let fit_src = DiskSource { index: fit, norm };
    let monitor_src = DiskSource { index: monitor, norm };
    let mut trainer = match &cfg.checkpoint {
        Some(path) => {
            let record = load_checkpoint(path)?;
            println!("resuming from {} at epoch {}", path.display(), record.epoch);
            Trainer::resume(&record, &cfg.train)?
        }
        None => Trainer::new(
            HybridSegmenter::new(&cfg.model, DType::F32, cfg.train.seed)?,
            &cfg.train,
        )?,
    };
    let out = trainer.fit(&fit_src, Some(&monitor_src), Some(&cfg.output_dir))?;
    let es = trainer.early_stop();
    println!(
        "trained {} epochs; best {} {:.6} at epoch {}{}",
        out.history.len(),
        cfg.train.monitor.name(),
        es.best_value,
        es.best_epoch,
        if out.stopped_early { " (early stop)" } else { "" }
    );
    Ok(0)
}

fn cmd_eval(cfg: &RunConfig) -> Result<i32> {
    let model = load_model(cfg)?;
    let root = require(&cfg.dataset_root, "--dataset-root")?;
    let index = scan_dataset(root)?;
    let index = match &cfg.split_manifest {
        Some(dir) => read_split_manifest(dir, &index)?.1,
        None => index,
    };
    let src = DiskSource {
        index,
        norm: Normalization::from_config(model.config()),
    };
    let report = evaluate(&model, &src, model.config().input_size, cfg.train.threshold)?;
    let agg = report.aggregate(cfg.aggregation);
    let csv_path = cfg
        .metrics_csv
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("metrics.csv"));
    write_metrics_csv(&csv_path, &report.images, agg)?;
    write_metrics_json(&cfg.output_dir.join("metrics.json"), &report.images, agg)?;
    println!("{} images ({})", agg.n_images, agg.aggregation.name());
    for (name, v) in crate::metrics::METRIC_NAMES.iter().zip(agg.values()) {
        println!("{name}: {v:.6}");
    }
    Ok(0)
}

fn cmd_infer(cfg: &RunConfig) -> Result<i32> {
    let model = load_model(cfg)?;
    let input = require(&cfg.input, "--input")?;
    let inputs = collect_inputs(input)?;
    let out_dir = cfg.output_dir.join("masks");
    let summary = infer_paths(
        &model,
        &inputs,
        &out_dir,
        model.config().input_size,
        &Normalization::from_config(model.config()),
        cfg.train.threshold,
    )?;
    for (p, e) in &summary.failed {
        eprintln!("warning: {}: {e}", p.display());
    }
    println!("wrote {} masks to {}", summary.written.len(), out_dir.display());
    Ok(0)
}

fn cmd_bench(cfg: &RunConfig) -> Result<i32> {
    let model = match &cfg.checkpoint {
        Some(_) => load_model(cfg)?,
        None => HybridSegmenter::new(&cfg.model, DType::F32, cfg.train.seed)?,
    };
    let size = model.config().input_size;
    let report = benchmark_segmenter(&model, size, DType::F32, cfg.frames, cfg.warmup)?;
    let path = cfg.output_dir.join("bench.json");
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::io(&path, e.into()))?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    println!(
        "{}x{}: {:.2} FPS, latency {:.2} ± {:.2} ms over {} frames ({} warm-up)",
        size.0, size.1, report.fps, report.mean_latency_ms, report.std_latency_ms, report.frames, report.warmup
    );
    Ok(0)
}

fn cmd_report(cfg: &RunConfig) -> Result<i32> {
    let out = run_report(
        cfg.history_csv.as_deref(),
        cfg.metrics_csv.as_deref(),
        &cfg.output_dir,
    )?;
    print!("{}", out.summary_text);
    Ok(0)
}

fn cmd_dataset_check(cfg: &RunConfig) -> Result<i32> {
    let root = require(&cfg.dataset_root, "--dataset-root")?;
    let report = check_dataset(root)?;
    let text = report.to_string();
    print!("{text}");
    let path = cfg.output_dir.join("dataset_check.txt");
    std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    Ok(if report.is_clean() { 0 } else { 1 })
}
