//! Convolutional fusion decoder and prediction head.
//!
//! Each decoder block is `conv3x3 -> batch norm -> ReLU -> bilinear x2`. The
//! deepest block consumes F4; every shallower block consumes the
//! concatenation of the previous block's output with the matching encoder
//! level. A 1x1 convolution maps D1 to per-class logits at half resolution,
//! which are then resized bilinearly to the input size.

use candle_core::Tensor;

use crate::config::ModelConfig;
use crate::encoder::{FeatureMap, FeaturePyramid};
use crate::error::{Error, Result};
use crate::nn::{resize_bilinear, BatchNorm2d, BatchStats, Conv2d, NormMode, VarBuilder};

/// Resolution a [`LogitMap`] lives at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    /// Half the input size, straight out of the 1x1 head.
    Head,
    /// The input size.
    Full,
}

/// `(batch, K, height, width)` per-pixel class logits.
#[derive(Debug, Clone)]
pub struct LogitMap {
    pub data: Tensor,
    pub resolution: Resolution,
}

/// Outputs D4..D1 of the decoder cascade.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub d4: FeatureMap,
    pub d3: FeatureMap,
    pub d2: FeatureMap,
    pub d1: FeatureMap,
}

/// `conv3x3 -> BN -> ReLU -> bilinear x2`.
#[derive(Debug, Clone)]
pub struct DecoderBlock {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl DecoderBlock {
    pub fn new(vb: &VarBuilder, in_channels: usize, out_channels: usize) -> Result<Self> {
        if out_channels == 0 {
            return Err(Error::Parameter("decoder block needs at least one output channel".into()));
        }
        Ok(Self {
            conv: Conv2d::new(&vb.pp("conv"), in_channels, out_channels, 3)?,
            bn: BatchNorm2d::new(&vb.pp("bn"), out_channels)?,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.conv.weight.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.conv.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor, mode: NormMode) -> Result<(Tensor, Option<BatchStats>)> {
        let (_, _, h, w) = x.dims4()?;
        let y = self.conv.forward(x)?;
        let (y, stats) = self.bn.forward(&y, mode)?;
        let y = resize_bilinear(&y.relu()?, 2 * h, 2 * w)?;
        Ok((y, stats))
    }
}

/// Four decoder blocks plus the 1x1 segmentation head.
#[derive(Debug, Clone)]
pub struct FusionDecoder {
    /// `blocks[i]` produces `D_{i+1}`.
    pub blocks: Vec<DecoderBlock>,
    pub head: Conv2d,
}

impl FusionDecoder {
    pub fn new(vb: &VarBuilder, cfg: &ModelConfig) -> Result<Self> {
        let w = cfg.decoder_widths;
        let inputs = [
            w[1] + cfg.stage_channels(1),
            w[2] + cfg.stage_channels(2),
            w[3] + cfg.stage_channels(3),
            cfg.stage_channels(4),
        ];
        let blocks = (0..4)
            .map(|i| DecoderBlock::new(&vb.pp(format!("blocks.{i}")), inputs[i], w[i]))
            .collect::<Result<Vec<_>>>()?;
        let head = Conv2d::new(&vb.pp("head"), w[0], cfg.num_classes, 1)?;
        Ok(Self { blocks, head })
    }

    /// Runs the skip-concatenation cascade. Returns the decoder state and the
    /// batch statistics of each block (train mode only), indexed like `blocks`.
    pub fn decode(
        &self,
        p: &FeaturePyramid,
        mode: NormMode,
    ) -> Result<(DecoderState, Vec<Option<BatchStats>>)> {
        let mut stats = vec![None, None, None, None];
        let (d4, s4) = self.blocks[3].forward(&p.f4.data, mode)?;
        stats[3] = s4;
        let mut prev = d4.clone();
        let mut outs = Vec::with_capacity(3);
        for (level, skip) in [(3usize, &p.f3), (2, &p.f2), (1, &p.f1)] {
            let (ph, pw) = (prev.dims()[2], prev.dims()[3]);
            let (sh, sw) = skip.spatial();
            if (ph, pw) != (sh, sw) {
                return Err(Error::dim(
                    format!("level {level}"),
                    format!("decoder stream is {ph}x{pw} but encoder level is {sh}x{sw}"),
                ));
            }
            let fused = Tensor::cat(&[&prev, &skip.data], 1)?;
            let (d, s) = self.blocks[level - 1].forward(&fused, mode)?;
            stats[level - 1] = s;
            outs.push(d.clone());
            prev = d;
        }
        let mut it = outs.into_iter();
        let state = DecoderState {
            d4: FeatureMap { data: d4, stage: 4 },
            d3: FeatureMap {
                data: it.next().expect("three levels"),
                stage: 3,
            },
            d2: FeatureMap {
                data: it.next().expect("three levels"),
                stage: 2,
            },
            d1: FeatureMap {
                data: it.next().expect("three levels"),
                stage: 1,
            },
        };
        Ok((state, stats))
    }

    /// 1x1 projection of D1 to class logits at half input resolution.
    pub fn segmentation_head(&self, d1: &FeatureMap) -> Result<LogitMap> {
        let expected = self.head.weight.dims()[1];
        if d1.channels() != expected {
            return Err(Error::dim(
                "channels",
                format!("head expects {expected} channels, got {}", d1.channels()),
            ));
        }
        Ok(LogitMap {
            data: self.head.forward(&d1.data)?,
            resolution: Resolution::Head,
        })
    }
}

/// Bilinear resize of head logits to the input size.
pub fn restore_resolution(y: &LogitMap, size: (usize, usize)) -> Result<LogitMap> {
    Ok(LogitMap {
        data: resize_bilinear(&y.data, size.0, size.1)?,
        resolution: Resolution::Full,
    })
}
