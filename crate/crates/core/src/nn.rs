//! Minimal layer toolkit on top of `candle_core`.
//!
//! Parameters live in a [`VarStore`] keyed by dotted names in construction
//! order. Layers hold clones of the same [`Var`]s, so updating a store entry
//! is visible to the layer that owns it.

use std::cell::RefCell;
use std::rc::Rc;

use candle_core::{DType, Device, Tensor, Var, D};
use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Named trainable parameters and non-trainable buffers of a model.
#[derive(Debug, Clone)]
pub struct VarStore {
    params: IndexMap<String, Var>,
    buffers: IndexMap<String, Var>,
    dtype: DType,
    device: Device,
}

impl VarStore {
    pub fn new(dtype: DType, device: Device) -> Self {
        Self {
            params: IndexMap::new(),
            buffers: IndexMap::new(),
            dtype,
            device,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn param(&self, name: &str) -> Option<&Var> {
        self.params.get(name)
    }

    pub fn buffer(&self, name: &str) -> Option<&Var> {
        self.buffers.get(name)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Copies `value` into the parameter or buffer called `name`.
    pub fn assign(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .params
            .get(name)
            .or_else(|| self.buffers.get(name))
            .ok_or_else(|| Error::Usage(format!("no tensor named `{name}` in model")))?;
        if var.dims() != value.dims() {
            return Err(Error::dim(
                name,
                format!("expected shape {:?}, found {:?}", var.dims(), value.dims()),
            ));
        }
        var.set(&value.to_dtype(self.dtype)?.to_device(&self.device)?)?;
        Ok(())
    }
}

/// Weight initialisation schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Const(f64),
    /// Normal truncated to two standard deviations.
    TruncNormal { std: f64 },
    /// Normal with `std = sqrt(2 / fan_in)`.
    FanIn { fan_in: usize },
}

struct BuilderInner {
    store: VarStore,
    rng: ChaCha8Rng,
}

/// Constructs parameters under a dotted name prefix.
#[derive(Clone)]
pub struct VarBuilder {
    inner: Rc<RefCell<BuilderInner>>,
    prefix: String,
}

impl VarBuilder {
    pub fn new(dtype: DType, device: Device, seed: u64) -> Self {
        Self {
            inner: Rc::new(RefCell::new(BuilderInner {
                store: VarStore::new(dtype, device),
                rng: ChaCha8Rng::seed_from_u64(seed),
            })),
            prefix: String::new(),
        }
    }

    /// Builder for the child scope `name`.
    pub fn pp(&self, name: impl AsRef<str>) -> Self {
        let name = name.as_ref();
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Self {
            inner: self.inner.clone(),
            prefix,
        }
    }

    pub fn dtype(&self) -> DType {
        self.inner.borrow().store.dtype
    }

    pub fn device(&self) -> Device {
        self.inner.borrow().store.device.clone()
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    fn make(&self, shape: &[usize], init: Init) -> Result<Var> {
        let mut inner = self.inner.borrow_mut();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::TruncNormal { std } => (0..n)
                .map(|_| loop {
                    let z: f64 = StandardNormal.sample(&mut inner.rng);
                    if z.abs() <= 2.0 {
                        break z * std;
                    }
                })
                .collect(),
            Init::FanIn { fan_in } => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut inner.rng);
                        z * std
                    })
                    .collect()
            }
        };
        let t = Tensor::from_vec(data, shape, &inner.store.device)?.to_dtype(inner.store.dtype)?;
        Ok(Var::from_tensor(&t)?)
    }

    /// Creates a trainable parameter.
    pub fn param(&self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        let var = self.make(shape, init)?;
        let full = self.full_name(name);
        let params = &mut self.inner.borrow_mut().store.params;
        if params.contains_key(&full) {
            return Err(Error::Usage(format!("duplicate parameter `{full}`")));
        }
        params.insert(full, var.clone());
        Ok(var)
    }

    /// Creates a non-trainable buffer.
    pub fn buffer(&self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        let var = self.make(shape, init)?;
        let full = self.full_name(name);
        let buffers = &mut self.inner.borrow_mut().store.buffers;
        if buffers.contains_key(&full) {
            return Err(Error::Usage(format!("duplicate buffer `{full}`")));
        }
        buffers.insert(full, var.clone());
        Ok(var)
    }

    /// Draws a value from the builder's generator; used for auxiliary seeds.
    pub fn next_u64(&self) -> u64 {
        self.inner.borrow_mut().rng.random()
    }

    /// Finishes construction and returns the populated store.
    pub fn into_store(self) -> VarStore {
        match Rc::try_unwrap(self.inner) {
            Ok(cell) => cell.into_inner().store,
            Err(shared) => shared.borrow().store.clone(),
        }
    }
}

/// Fully connected layer applied over the last axis.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Var,
    pub bias: Option<Var>,
}

impl Linear {
    pub fn new(vb: &VarBuilder, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let weight = vb.param("weight", &[out_dim, in_dim], Init::TruncNormal { std: 0.02 })?;
        let bias = if bias {
            Some(vb.param("bias", &[out_dim], Init::Zeros)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let in_dim = *dims.last().ok_or_else(|| Error::dim("features", "scalar input"))?;
        let rows = x.elem_count() / in_dim.max(1);
        let y = x.reshape((rows, in_dim))?.matmul(&self.weight.t()?)?;
        let y = match &self.bias {
            Some(b) => y.broadcast_add(b.as_tensor())?,
            None => y,
        };
        let mut out_dims = dims;
        *out_dims.last_mut().expect("non-empty") = self.weight.dim(0)?;
        Ok(y.reshape(out_dims)?)
    }
}

/// Layer normalisation over the last axis.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Var,
    pub beta: Var,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(vb: &VarBuilder, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: vb.param("weight", &[dim], Init::Const(1.0))?,
            beta: vb.param("bias", &[dim], Init::Zeros)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(self.gamma.as_tensor())?
            .broadcast_add(self.beta.as_tensor())?)
    }
}

/// 2-D convolution with square kernel, stride 1 and "same" zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Var,
    pub bias: Var,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(vb: &VarBuilder, in_ch: usize, out_ch: usize, kernel: usize) -> Result<Self> {
        let fan_in = in_ch * kernel * kernel;
        Ok(Self {
            weight: vb.param(
                "weight",
                &[out_ch, in_ch, kernel, kernel],
                Init::FanIn { fan_in },
            )?,
            bias: vb.param("bias", &[out_ch], Init::Zeros)?,
            padding: kernel / 2,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let in_ch = self.weight.dim(1)?;
        if x.dim(1)? != in_ch {
            return Err(Error::dim(
                "channels",
                format!("conv expects {in_ch} input channels, got {}", x.dim(1)?),
            ));
        }
        let y = if self.weight.dim(2)? == 1 {
            // 1x1 kernels reduce to a per-pixel matmul.
            let (b, c, h, w) = x.dims4()?;
            let out = self.weight.dim(0)?;
            let wmat = self.weight.reshape((out, c))?;
            let flat = x.reshape((b, c, h * w))?;
            // candle's batched matmul mishandles stride-0 batch dims, so
            // materialise the broadcast
            wmat.broadcast_left(b)?
                .contiguous()?
                .matmul(&flat)?
                .reshape((b, out, h, w))?
        } else {
            x.conv2d(self.weight.as_tensor(), self.padding, 1, 1, 1)?
        };
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1, 1))?)?)
    }
}

/// Per-channel batch statistics produced by a training-mode forward.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Tensor,
    pub var_unbiased: Tensor,
}

/// How batch normalisation obtains its statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Frozen running statistics.
    Eval,
    /// Current batch statistics.
    Train,
}

/// Batch normalisation over the channel axis of an NCHW tensor.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Var,
    pub beta: Var,
    pub running_mean: Var,
    pub running_var: Var,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new(vb: &VarBuilder, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: vb.param("weight", &[channels], Init::Const(1.0))?,
            beta: vb.param("bias", &[channels], Init::Zeros)?,
            running_mean: vb.buffer("running_mean", &[channels], Init::Zeros)?,
            running_var: vb.buffer("running_var", &[channels], Init::Const(1.0))?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: NormMode) -> Result<(Tensor, Option<BatchStats>)> {
        let (b, c, h, w) = x.dims4()?;
        let (mean, var, stats) = match mode {
            NormMode::Eval => (
                self.running_mean.reshape((1, c, 1, 1))?,
                self.running_var.reshape((1, c, 1, 1))?,
                None,
            ),
            NormMode::Train => {
                let n = b * h * w;
                let mean = x.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
                let centered = x.broadcast_sub(&mean)?;
                let var = centered
                    .sqr()?
                    .mean_keepdim(0)?
                    .mean_keepdim(2)?
                    .mean_keepdim(3)?;
                let correction = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
                let stats = BatchStats {
                    mean: mean.detach().flatten_all()?,
                    var_unbiased: (var.detach().flatten_all()? * correction)?,
                };
                (mean, var, Some(stats))
            }
        };
        let normed = x
            .broadcast_sub(&mean)?
            .broadcast_div(&(var + self.eps)?.sqrt()?)?;
        let y = normed
            .broadcast_mul(&self.gamma.reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.beta.reshape((1, c, 1, 1))?)?;
        Ok((y, stats))
    }

    /// Folds batch statistics into the running averages.
    pub fn update_running(&self, stats: &BatchStats) -> Result<()> {
        let m = self.momentum;
        let mean = ((self.running_mean.as_tensor() * (1.0 - m))? + (&stats.mean * m)?)?;
        let var = ((self.running_var.as_tensor() * (1.0 - m))? + (&stats.var_unbiased * m)?)?;
        self.running_mean.set(&mean)?;
        self.running_var.set(&var)?;
        Ok(())
    }
}

/// Numerically stable softmax over the last axis.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let sum = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&sum)?)
}

/// Source taps of half-pixel-centre linear interpolation from `in_len` to
/// `out_len` samples: `(lower index, upper index, weight of upper)`.
pub fn linear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let lambda = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, lambda)
        })
        .collect()
}

/// Dense `(out_len, in_len)` interpolation matrix built from [`linear_taps`].
pub fn interpolation_matrix(
    in_len: usize,
    out_len: usize,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let mut data = vec![0f64; out_len * in_len];
    for (o, (i0, i1, l)) in linear_taps(in_len, out_len).into_iter().enumerate() {
        data[o * in_len + i0] += 1.0 - l;
        data[o * in_len + i1] += l;
    }
    Ok(Tensor::from_vec(data, (out_len, in_len), device)?.to_dtype(dtype)?)
}

/// Bilinear resize of an NCHW tensor with half-pixel-centre alignment.
///
/// Written as two matrix products so gradients flow through it.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if h == 0 || w == 0 {
        return Err(Error::dim("height", "cannot resize an empty map"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let rows = interpolation_matrix(h, out_h, x.dtype(), x.device())?;
    let cols_t = interpolation_matrix(w, out_w, x.dtype(), x.device())?.t()?;
    let flat = x.reshape((b * c, h, w))?;
    // broadcasts are materialised: batched matmul mishandles stride-0 batches
    let y = rows.broadcast_left(b * c)?.contiguous()?.matmul(&flat)?;
    let y = y.matmul(&cols_t.broadcast_left(b * c)?.contiguous()?)?;
    Ok(y.reshape((b, c, out_h, out_w))?)
}
