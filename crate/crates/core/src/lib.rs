//! Polyp segmentation with a shifted-window transformer encoder and a
//! convolutional fusion decoder.
//!
//! The crate covers the whole loop: dataset ingestion and augmentation, the
//! network, a BCE + soft-IoU objective, AdamW training with early stopping,
//! pixel metrics, throughput benchmarking and report rendering.

pub mod cli;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod infer;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod report;
pub mod training;
pub mod window;

pub use config::{ModelConfig, Monitor, RotationMode, RunConfig, TrainConfig};
pub use error::{Error, Result};
pub use metrics::{compute_metrics, Aggregation, ConfusionCounts, MetricReport};
pub use model::{HybridSegmenter, Segmenter};
pub use training::{evaluate, Trainer};
