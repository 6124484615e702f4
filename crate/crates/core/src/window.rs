//! Window token layout and windowed multi-head self-attention.
//!
//! A feature map is zero-padded up to a multiple of the window size, cyclically
//! shifted by `-shift` on both spatial axes and cut into non-overlapping
//! `window x window` tiles. [`window_reverse`] undoes all three steps exactly.
//!
//! Whenever the map is shifted or padded, tokens carry a region label and an
//! additive mask stops attention between tokens of different regions: tokens
//! that were not neighbours before the cyclic shift, and real tokens versus
//! padding.

use candle_core::{DType, Device, Tensor, D};

use crate::encoder::FeatureMap;
use crate::error::{Error, Result};
use crate::nn::{softmax_last, Init, Linear, VarBuilder};

/// Additive score for disallowed token pairs. `exp(-1e4)` underflows to zero.
pub const MASK_VALUE: f64 = -1e4;

/// Geometry of a partitioned map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowLayout {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub window_size: usize,
    pub shift: usize,
}

impl WindowLayout {
    pub fn new(
        batch: usize,
        height: usize,
        width: usize,
        window_size: usize,
        shift: usize,
    ) -> Result<Self> {
        if window_size == 0 {
            return Err(Error::Parameter("window size must be positive".into()));
        }
        if shift >= window_size {
            return Err(Error::Parameter(format!(
                "shift {shift} must be smaller than the window size {window_size}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::dim("height", "window partition of an empty map"));
        }
        Ok(Self {
            batch,
            height,
            width,
            window_size,
            shift,
        })
    }

    pub fn padded_height(&self) -> usize {
        self.height.div_ceil(self.window_size) * self.window_size
    }

    pub fn padded_width(&self) -> usize {
        self.width.div_ceil(self.window_size) * self.window_size
    }

    pub fn windows_per_image(&self) -> usize {
        (self.padded_height() / self.window_size) * (self.padded_width() / self.window_size)
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window_size * self.window_size
    }

    pub fn is_padded(&self) -> bool {
        self.padded_height() != self.height || self.padded_width() != self.width
    }

    /// True when some token pairs inside a window must not attend.
    pub fn needs_mask(&self) -> bool {
        self.shift > 0 || self.is_padded()
    }

    /// Region label of every position of the padded, shifted grid (row-major).
    ///
    /// Two tokens may attend to each other iff their labels are equal.
    pub fn region_labels(&self) -> Vec<usize> {
        let (hp, wp) = (self.padded_height(), self.padded_width());
        let (ws, s) = (self.window_size, self.shift);
        let band = |pos: usize, len: usize| -> usize {
            if s == 0 || pos < len - ws {
                0
            } else if pos < len - s {
                1
            } else {
                2
            }
        };
        let mut labels = Vec::with_capacity(hp * wp);
        for i in 0..hp {
            for j in 0..wp {
                // Position (i, j) of the shifted grid came from (i + s, j + s).
                let src_i = (i + s) % hp;
                let src_j = (j + s) % wp;
                let pad = usize::from(src_i >= self.height || src_j >= self.width);
                labels.push((band(i, hp) * 3 + band(j, wp)) * 2 + pad);
            }
        }
        labels
    }
}

/// Windowed token layout of a feature map.
#[derive(Debug, Clone)]
pub struct WindowSet {
    /// `(batch * num_windows, window_size^2, channels)`.
    pub data: Tensor,
    pub layout: WindowLayout,
    pub stage: usize,
}

impl WindowSet {
    pub fn source_shape(&self) -> (usize, usize) {
        (self.layout.height, self.layout.width)
    }

    pub fn shift(&self) -> usize {
        self.layout.shift
    }

    pub fn num_windows(&self) -> usize {
        self.layout.windows_per_image()
    }
}

fn roll2(x: &Tensor, dh: usize, dw: usize) -> Result<Tensor> {
    // Moves row `i` to `(i + dh) mod h` (same for columns), on (B, H, W, C).
    let mut x = x.clone();
    for (axis, d) in [(1usize, dh), (2usize, dw)] {
        let n = x.dim(axis)?;
        let d = d % n;
        if d != 0 {
            let tail = x.narrow(axis, n - d, d)?;
            let head = x.narrow(axis, 0, n - d)?;
            x = Tensor::cat(&[&tail, &head], axis)?;
        }
    }
    Ok(x)
}

/// Partitions a channels-last `(B, H, W, C)` tensor into windows.
pub fn partition_channels_last(x: &Tensor, window_size: usize, shift: usize) -> Result<(Tensor, WindowLayout)> {
    let (b, h, w, c) = x.dims4()?;
    let layout = WindowLayout::new(b, h, w, window_size, shift)?;
    let (hp, wp) = (layout.padded_height(), layout.padded_width());
    let mut x = x.clone();
    if hp > h {
        x = x.pad_with_zeros(1, 0, hp - h)?;
    }
    if wp > w {
        x = x.pad_with_zeros(2, 0, wp - w)?;
    }
    if shift > 0 {
        x = roll2(&x, hp - shift, wp - shift)?;
    }
    let ws = window_size;
    let windows = x
        .reshape((b, hp / ws, ws, wp / ws, ws, c))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?
        .reshape((b * layout.windows_per_image(), ws * ws, c))?;
    Ok((windows, layout))
}

/// Inverse of [`partition_channels_last`]: un-partitions, un-shifts and crops.
pub fn reverse_channels_last(windows: &Tensor, layout: &WindowLayout) -> Result<Tensor> {
    let (n, t, c) = windows.dims3()?;
    let ws = layout.window_size;
    let (hp, wp) = (layout.padded_height(), layout.padded_width());
    if n != layout.batch * layout.windows_per_image() || t != ws * ws {
        return Err(Error::dim(
            "windows",
            format!(
                "expected ({}, {}, C), got ({n}, {t}, {c})",
                layout.batch * layout.windows_per_image(),
                ws * ws
            ),
        ));
    }
    let mut x = windows
        .reshape((layout.batch, hp / ws, wp / ws, ws, ws, c))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?
        .reshape((layout.batch, hp, wp, c))?;
    if layout.shift > 0 {
        x = roll2(&x, layout.shift, layout.shift)?;
    }
    if hp > layout.height {
        x = x.narrow(1, 0, layout.height)?;
    }
    if wp > layout.width {
        x = x.narrow(2, 0, layout.width)?;
    }
    Ok(x.contiguous()?)
}

/// Partitions an NCHW feature map into (optionally shifted) windows.
pub fn window_partition(fm: &FeatureMap, window_size: usize, shift: usize) -> Result<WindowSet> {
    let x = fm.data.permute((0, 2, 3, 1))?;
    let (data, layout) = partition_channels_last(&x, window_size, shift)?;
    Ok(WindowSet {
        data,
        layout,
        stage: fm.stage,
    })
}

/// Restores the NCHW feature map a [`WindowSet`] was cut from.
pub fn window_reverse(ws: &WindowSet) -> Result<FeatureMap> {
    let x = reverse_channels_last(&ws.data, &ws.layout)?;
    Ok(FeatureMap {
        data: x.permute((0, 3, 1, 2))?.contiguous()?,
        stage: ws.stage,
    })
}

/// Additive attention mask `(num_windows, N, N)` for a layout, or `None`
/// when every pair inside a window may attend.
pub fn attention_mask(layout: &WindowLayout, dtype: DType, device: &Device) -> Result<Option<Tensor>> {
    if !layout.needs_mask() {
        return Ok(None);
    }
    let labels = layout.region_labels();
    let (ws, wp) = (layout.window_size, layout.padded_width());
    let (nh, nw) = (layout.padded_height() / ws, wp / ws);
    let n = ws * ws;
    let mut mask = vec![0f64; nh * nw * n * n];
    for wi in 0..nh {
        for wj in 0..nw {
            let window: Vec<usize> = (0..n)
                .map(|t| labels[(wi * ws + t / ws) * wp + wj * ws + t % ws])
                .collect();
            let base = (wi * nw + wj) * n * n;
            for a in 0..n {
                for b in 0..n {
                    if window[a] != window[b] {
                        mask[base + a * n + b] = MASK_VALUE;
                    }
                }
            }
        }
    }
    Ok(Some(
        Tensor::from_vec(mask, (nh * nw, n, n), device)?.to_dtype(dtype)?,
    ))
}

/// Index into the `(2w-1)^2` relative-position table for every token pair.
pub fn relative_position_index(window_size: usize) -> Vec<u32> {
    let ws = window_size as i64;
    let n = window_size * window_size;
    let mut out = Vec::with_capacity(n * n);
    for a in 0..n as i64 {
        for b in 0..n as i64 {
            let dy = a / ws - b / ws + ws - 1;
            let dx = a % ws - b % ws + ws - 1;
            out.push((dy * (2 * ws - 1) + dx) as u32);
        }
    }
    out
}

/// Multi-head self-attention restricted to the tokens of each window, with a
/// learned relative position bias.
#[derive(Debug, Clone)]
pub struct WindowAttention {
    pub qkv: Linear,
    pub proj: Linear,
    pub position_table: candle_core::Var,
    position_index: Tensor,
    pub heads: usize,
    pub window_size: usize,
    pub dim: usize,
}

impl WindowAttention {
    pub fn new(vb: &VarBuilder, dim: usize, heads: usize, window_size: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Parameter(format!(
                "{dim} channels cannot be split into {heads} heads"
            )));
        }
        let side = 2 * window_size - 1;
        let index = relative_position_index(window_size);
        let n = index.len();
        Ok(Self {
            qkv: Linear::new(&vb.pp("qkv"), dim, 3 * dim, true)?,
            proj: Linear::new(&vb.pp("proj"), dim, dim, true)?,
            position_table: vb.param(
                "relative_position_bias_table",
                &[side * side, heads],
                Init::TruncNormal { std: 0.02 },
            )?,
            position_index: Tensor::from_vec(index, n, &vb.device())?,
            heads,
            window_size,
            dim,
        })
    }

    fn position_bias(&self) -> Result<Tensor> {
        let n = self.window_size * self.window_size;
        Ok(self
            .position_table
            .index_select(&self.position_index, 0)?
            .reshape((n, n, self.heads))?
            .permute((2, 0, 1))?
            .contiguous()?
            .unsqueeze(0)?)
    }

    /// Attends within windows of `x: (B*nW, N, C)`.
    ///
    /// `mask` is `(nW, N, N)`. The relative position bias is added only when
    /// `N` equals the configured window area. Returns the projected output
    /// and the attention weights `(B*nW, heads, N, N)`.
    pub fn attend(&self, x: &Tensor, mask: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let (bw, n, c) = x.dims3()?;
        if c != self.dim {
            return Err(Error::Parameter(format!(
                "attention built for {} channels, got {c}",
                self.dim
            )));
        }
        let hd = c / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let qkv = self
            .qkv
            .forward(x)?
            .reshape((bw, n, 3, self.heads, hd))?
            .permute((2, 0, 3, 1, 4))?;
        let q = (qkv.get(0)?.contiguous()? * scale)?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let mut scores = q.matmul(&k.t()?)?;
        if n == self.window_size * self.window_size {
            scores = scores.broadcast_add(&self.position_bias()?)?;
        }
        if let Some(m) = mask {
            let nw = m.dim(0)?;
            if bw % nw != 0 || m.dim(1)? != n {
                return Err(Error::dim(
                    "mask",
                    format!("mask {:?} does not fit {bw} windows of {n} tokens", m.dims()),
                ));
            }
            scores = scores
                .reshape((bw / nw, nw, self.heads, n, n))?
                .broadcast_add(&m.unsqueeze(1)?.unsqueeze(0)?)?
                .reshape((bw, self.heads, n, n))?;
        }
        let weights = softmax_last(&scores)?;
        let out = weights
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((bw, n, c))?;
        Ok((self.proj.forward(&out)?, weights))
    }

    /// Attention over a [`WindowSet`], building the mask from its layout.
    pub fn forward_windows(&self, ws: &WindowSet) -> Result<WindowSet> {
        if ws.layout.window_size != self.window_size {
            return Err(Error::Parameter(format!(
                "window set uses window {}, attention expects {}",
                ws.layout.window_size, self.window_size
            )));
        }
        let mask = attention_mask(&ws.layout, ws.data.dtype(), ws.data.device())?;
        let (data, _) = self.attend(&ws.data, mask.as_ref())?;
        Ok(WindowSet {
            data,
            layout: ws.layout,
            stage: ws.stage,
        })
    }
}

/// Sum of attention weights per query row, for diagnostics.
pub fn row_sums(weights: &Tensor) -> Result<Tensor> {
    Ok(weights.sum(D::Minus1)?)
}
