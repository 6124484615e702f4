//! The full segmentation network and the [`Segmenter`] abstraction used by
//! evaluation, inference and benchmarking.

use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::config::{check_input_size, ModelConfig};
use crate::decoder::{restore_resolution, DecoderState, FusionDecoder, LogitMap};
use crate::encoder::{FeaturePyramid, SwinEncoder};
use crate::error::{Error, Result};
use crate::nn::{BatchStats, NormMode, VarBuilder, VarStore};
use crate::training::checkpoint::read_named_tensors;

/// Anything that maps a normalised `(B, 3, H, W)` batch to full-resolution
/// `(B, K, H, W)` logits without mutating itself.
pub trait Segmenter: Send + Sync {
    fn predict(&self, images: &Tensor) -> Result<Tensor>;

    fn num_classes(&self) -> usize {
        1
    }
}

/// Intermediate tensors of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub pyramid: FeaturePyramid,
    pub decoder: DecoderState,
    pub head: LogitMap,
    pub logits: LogitMap,
}

/// Shifted-window transformer encoder + convolutional fusion decoder.
///
/// Not `Clone`: layers share their parameter storage with the store.
#[derive(Debug)]
pub struct HybridSegmenter {
    cfg: ModelConfig,
    encoder: SwinEncoder,
    decoder: FusionDecoder,
    store: VarStore,
}

impl HybridSegmenter {
    /// Builds a randomly initialised model. Initialisation is a pure function
    /// of `seed` and `dtype`.
    pub fn new(cfg: &ModelConfig, dtype: DType, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let vb = VarBuilder::new(dtype, Device::Cpu, seed);
        let encoder = SwinEncoder::new(&vb.pp("encoder"), cfg)?;
        let decoder = FusionDecoder::new(&vb.pp("decoder"), cfg)?;
        let model = Self {
            cfg: cfg.clone(),
            encoder,
            decoder,
            store: vb.into_store(),
        };
        if let Some(path) = &cfg.pretrained_backbone {
            model.load_backbone(path)?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &VarStore {
        &self.store
    }

    pub fn encoder(&self) -> &SwinEncoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &FusionDecoder {
        &self.decoder
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// Copies every `encoder.*` tensor of a checkpoint file into the backbone.
    pub fn load_backbone(&self, path: &Path) -> Result<usize> {
        let tensors = read_named_tensors(path)?;
        let mut loaded = 0;
        for t in tensors.iter().filter(|t| t.name.starts_with("encoder.")) {
            self.store.assign(&t.name, &t.to_tensor(&Device::Cpu)?)?;
            loaded += 1;
        }
        if loaded == 0 {
            return Err(Error::Usage(format!(
                "{} holds no encoder tensors",
                path.display()
            )));
        }
        Ok(loaded)
    }

    fn check_image(&self, images: &Tensor) -> Result<(usize, usize)> {
        let (_, c, h, w) = images.dims4()?;
        if c != 3 {
            return Err(Error::dim("channels", format!("expected 3 channels, got {c}")));
        }
        check_input_size(h, w)?;
        Ok((h, w))
    }

    /// Forward pass exposing every intermediate, plus the batch statistics of
    /// each decoder block when `mode` is [`NormMode::Train`].
    pub fn forward_trace(
        &self,
        images: &Tensor,
        mode: NormMode,
    ) -> Result<(ForwardTrace, Vec<Option<BatchStats>>)> {
        let (h, w) = self.check_image(images)?;
        let images = images.to_dtype(self.dtype())?;
        let pyramid = self.encoder.forward(&images)?;
        let (decoder, stats) = self.decoder.decode(&pyramid, mode)?;
        let head = self.decoder.segmentation_head(&decoder.d1)?;
        let logits = restore_resolution(&head, (h, w))?;
        Ok((
            ForwardTrace {
                pyramid,
                decoder,
                head,
                logits,
            },
            stats,
        ))
    }

    /// Full-resolution logits using batch statistics, without touching the
    /// running averages.
    pub fn forward_batch_stats(&self, images: &Tensor) -> Result<Tensor> {
        Ok(self.forward_trace(images, NormMode::Train)?.0.logits.data)
    }

    /// Training-mode forward: batch statistics are used and folded into the
    /// running averages.
    pub fn forward_train(&mut self, images: &Tensor) -> Result<Tensor> {
        let (trace, stats) = self.forward_trace(images, NormMode::Train)?;
        for (block, s) in self.decoder.blocks.iter().zip(stats) {
            if let Some(s) = s {
                block.bn.update_running(&s)?;
            }
        }
        Ok(trace.logits.data)
    }

    /// Evaluation-mode forward with frozen statistics.
    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        Ok(self.forward_trace(images, NormMode::Eval)?.0.logits.data)
    }
}

impl Segmenter for HybridSegmenter {
    fn predict(&self, images: &Tensor) -> Result<Tensor> {
        self.forward(images)
    }

    fn num_classes(&self) -> usize {
        self.cfg.num_classes
    }
}
