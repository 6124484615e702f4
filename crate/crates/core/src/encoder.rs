//! Four-stage hierarchical shifted-window transformer backbone.
//!
//! Stage `i` emits a feature map at stride `2^(i+1)` with `C * 2^(i-1)`
//! channels: patch embedding (stride 4) feeds stage 1, and each later stage
//! starts with a 2x2 patch merge.

use candle_core::Tensor;

use crate::config::{check_input_size, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, VarBuilder};
use crate::window::{partition_channels_last, reverse_channels_last, attention_mask, WindowAttention};

/// Side length of the square patches embedded by stage 1.
pub const PATCH_SIZE: usize = 4;

/// NCHW feature map tagged with the stage that produced it.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub data: Tensor,
    pub stage: usize,
}

impl FeatureMap {
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let d = self.data.dims();
        (d[0], d[1], d[2], d[3])
    }

    pub fn channels(&self) -> usize {
        self.data.dims()[1]
    }

    pub fn spatial(&self) -> (usize, usize) {
        let d = self.data.dims();
        (d[2], d[3])
    }
}

/// The four encoder outputs, finest first.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub f1: FeatureMap,
    pub f2: FeatureMap,
    pub f3: FeatureMap,
    pub f4: FeatureMap,
}

impl FeaturePyramid {
    pub fn levels(&self) -> [&FeatureMap; 4] {
        [&self.f1, &self.f2, &self.f3, &self.f4]
    }
}

fn to_nchw(x: &Tensor) -> Result<Tensor> {
    Ok(x.permute((0, 3, 1, 2))?.contiguous()?)
}

fn to_nhwc(x: &Tensor) -> Result<Tensor> {
    Ok(x.permute((0, 2, 3, 1))?.contiguous()?)
}

/// Non-overlapping 4x4 patch projection followed by layer norm.
///
/// Equivalent to a stride-4 convolution with a 4x4 kernel whose weight is
/// stored flattened as `(C, 3*4*4)`.
#[derive(Debug, Clone)]
pub struct PatchEmbed {
    pub proj: Linear,
    pub norm: LayerNorm,
}

impl PatchEmbed {
    pub fn new(vb: &VarBuilder, channels: usize) -> Result<Self> {
        Ok(Self {
            proj: Linear::new(&vb.pp("proj"), 3 * PATCH_SIZE * PATCH_SIZE, channels, true)?,
            norm: LayerNorm::new(&vb.pp("norm"), channels)?,
        })
    }

    /// `(B, 3, H, W)` -> channels-last `(B, H/4, W/4, C)`.
    fn forward_channels_last(&self, image: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = image.dims4()?;
        if c != 3 {
            return Err(Error::dim("channels", format!("expected 3 channels, got {c}")));
        }
        for (axis, v) in [("height", h), ("width", w)] {
            if v == 0 || v % PATCH_SIZE != 0 {
                return Err(Error::dim(
                    axis,
                    format!("{v} is not divisible by the patch size {PATCH_SIZE}"),
                ));
            }
        }
        let (ph, pw) = (h / PATCH_SIZE, w / PATCH_SIZE);
        let patches = image
            .reshape((b, 3, ph, PATCH_SIZE, pw, PATCH_SIZE))?
            .permute((0, 2, 4, 1, 3, 5))?
            .contiguous()?
            .reshape((b, ph, pw, 3 * PATCH_SIZE * PATCH_SIZE))?;
        self.norm.forward(&self.proj.forward(&patches)?)
    }

    pub fn forward(&self, image: &Tensor) -> Result<FeatureMap> {
        Ok(FeatureMap {
            data: to_nchw(&self.forward_channels_last(image)?)?,
            stage: 1,
        })
    }
}

/// 2x2 neighbourhood concatenation, layer norm and linear reduction `4C -> 2C`.
#[derive(Debug, Clone)]
pub struct PatchMerge {
    pub norm: LayerNorm,
    pub reduction: Linear,
}

impl PatchMerge {
    pub fn new(vb: &VarBuilder, channels: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(&vb.pp("norm"), 4 * channels)?,
            reduction: Linear::new(&vb.pp("reduction"), 4 * channels, 2 * channels, false)?,
        })
    }

    fn forward_channels_last(&self, x: &Tensor) -> Result<Tensor> {
        let (b, h, w, c) = x.dims4()?;
        for (axis, v) in [("height", h), ("width", w)] {
            if v % 2 != 0 {
                return Err(Error::dim(axis, format!("patch merge needs an even size, got {v}")));
            }
        }
        // Concatenation order (row, col) offsets: (0,0), (1,0), (0,1), (1,1).
        let merged = x
            .reshape((b, h / 2, 2, w / 2, 2, c))?
            .permute((0, 1, 3, 4, 2, 5))?
            .contiguous()?
            .reshape((b, h / 2, w / 2, 4 * c))?;
        self.reduction.forward(&self.norm.forward(&merged)?)
    }

    pub fn forward(&self, fm: &FeatureMap) -> Result<FeatureMap> {
        let out = self.forward_channels_last(&to_nhwc(&fm.data)?)?;
        Ok(FeatureMap {
            data: to_nchw(&out)?,
            stage: fm.stage + 1,
        })
    }
}

/// Pre-norm transformer block over (optionally shifted) windows.
#[derive(Debug, Clone)]
pub struct SwinBlock {
    pub norm1: LayerNorm,
    pub attn: WindowAttention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub window_size: usize,
    /// Shift used when the map is larger than one window.
    pub shift: usize,
}

impl SwinBlock {
    pub fn new(
        vb: &VarBuilder,
        dim: usize,
        heads: usize,
        window_size: usize,
        shifted: bool,
        mlp_ratio: f64,
    ) -> Result<Self> {
        let hidden = ((dim as f64) * mlp_ratio).round().max(1.0) as usize;
        Ok(Self {
            norm1: LayerNorm::new(&vb.pp("norm1"), dim)?,
            attn: WindowAttention::new(&vb.pp("attn"), dim, heads, window_size)?,
            norm2: LayerNorm::new(&vb.pp("norm2"), dim)?,
            fc1: Linear::new(&vb.pp("mlp.fc1"), dim, hidden, true)?,
            fc2: Linear::new(&vb.pp("mlp.fc2"), hidden, dim, true)?,
            window_size,
            shift: if shifted { window_size / 2 } else { 0 },
        })
    }

    /// Shift applied to a map of the given size. A map that fits in a single
    /// window is never shifted.
    pub fn effective_shift(&self, height: usize, width: usize) -> usize {
        if height <= self.window_size && width <= self.window_size {
            0
        } else {
            self.shift
        }
    }

    /// Channels-last forward `(B, H, W, C)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, h, w, _) = x.dims4()?;
        let shift = self.effective_shift(h, w);
        let normed = self.norm1.forward(x)?;
        let (windows, layout) = partition_channels_last(&normed, self.window_size, shift)?;
        let mask = attention_mask(&layout, x.dtype(), x.device())?;
        let (attended, _) = self.attn.attend(&windows, mask.as_ref())?;
        let x = (x + reverse_channels_last(&attended, &layout)?)?;
        let hidden = self.fc1.forward(&self.norm2.forward(&x)?)?.gelu_erf()?;
        Ok((&x + self.fc2.forward(&hidden)?)?)
    }
}

/// One encoder stage: optional patch merge, blocks, output norm.
#[derive(Debug, Clone)]
pub struct EncoderStage {
    pub merge: Option<PatchMerge>,
    pub blocks: Vec<SwinBlock>,
    pub out_norm: LayerNorm,
    pub stage: usize,
}

/// Hierarchical transformer backbone producing a [`FeaturePyramid`].
#[derive(Debug, Clone)]
pub struct SwinEncoder {
    pub patch_embed: PatchEmbed,
    pub stages: Vec<EncoderStage>,
    cfg: ModelConfig,
}

impl SwinEncoder {
    pub fn new(vb: &VarBuilder, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let patch_embed = PatchEmbed::new(&vb.pp("patch_embed"), cfg.base_channels)?;
        let mut stages = Vec::with_capacity(4);
        for s in 0..4 {
            let dim = cfg.stage_channels(s + 1);
            let svb = vb.pp(format!("stages.{s}"));
            let merge = if s == 0 {
                None
            } else {
                Some(PatchMerge::new(&svb.pp("merge"), dim / 2)?)
            };
            let blocks = (0..cfg.stage_depths[s])
                .map(|i| {
                    SwinBlock::new(
                        &svb.pp(format!("blocks.{i}")),
                        dim,
                        cfg.stage_heads[s],
                        cfg.window_size,
                        i % 2 == 1,
                        cfg.mlp_ratio,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(EncoderStage {
                merge,
                blocks,
                out_norm: LayerNorm::new(&svb.pp("norm"), dim)?,
                stage: s + 1,
            });
        }
        Ok(Self {
            patch_embed,
            stages,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn forward(&self, image: &Tensor) -> Result<FeaturePyramid> {
        let (_, _, h, w) = image.dims4()?;
        check_input_size(h, w)?;
        let mut x = self.patch_embed.forward_channels_last(image)?;
        let mut outs = Vec::with_capacity(4);
        for stage in &self.stages {
            if let Some(merge) = &stage.merge {
                x = merge.forward_channels_last(&x)?;
            }
            for block in &stage.blocks {
                x = block.forward(&x)?;
            }
            outs.push(FeatureMap {
                data: to_nchw(&stage.out_norm.forward(&x)?)?,
                stage: stage.stage,
            });
        }
        let mut it = outs.into_iter();
        Ok(FeaturePyramid {
            f1: it.next().expect("four stages"),
            f2: it.next().expect("four stages"),
            f3: it.next().expect("four stages"),
            f4: it.next().expect("four stages"),
        })
    }
}

/// Stage-1 patch embedding of an image batch with freshly initialised weights
/// drawn from `seed`.
pub fn patch_embed(image: &Tensor, cfg: &ModelConfig, seed: u64) -> Result<FeatureMap> {
    let vb = VarBuilder::new(image.dtype(), image.device().clone(), seed);
    PatchEmbed::new(&vb, cfg.base_channels)?.forward(image)
}

/// Stage transition with freshly initialised weights drawn from `seed`.
pub fn patch_merge(fm: &FeatureMap, seed: u64) -> Result<FeatureMap> {
    let vb = VarBuilder::new(fm.data.dtype(), fm.data.device().clone(), seed);
    PatchMerge::new(&vb, fm.channels())?.forward(fm)
}
