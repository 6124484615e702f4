//! Versioned binary checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "HYBSEG" | version u32 | model_cfg_len u32 | train_cfg_len u32
//! model_cfg (key = value text) | train_cfg (key = value text)
//! epoch u64 | monitored_value f64 | optimizer_step u64
//! best_value f64 | best_epoch u64 | since_improvement u64 | last_epoch u64
//! patience u64 | min_delta f64
//! n_tensors u32, then per tensor:
//!   name_len u32 | name | dtype u8 | rank u8 | dims u64 x rank | data
//! crc32 u32 over everything before it
//! ```

use std::path::Path;

use candle_core::{DType, Device, Tensor};

use super::early_stop::EarlyStopState;
use crate::config::{ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::model::HybridSegmenter;

pub const MAGIC: &[u8; 6] = b"HYBSEG";
pub const FORMAT_VERSION: u32 = 1;

/// Prefixes of optimizer moment tensors.
pub const MOMENT1_PREFIX: &str = "optim.m.";
pub const MOMENT2_PREFIX: &str = "optim.v.";

/// A tensor stored as raw little-endian bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl NamedTensor {
    pub fn from_tensor(name: impl Into<String>, t: &Tensor) -> Result<Self> {
        let flat = t.flatten_all()?;
        let bytes = match t.dtype() {
            DType::F32 => flat.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
            DType::F64 => flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
            other => return Err(Error::Usage(format!("cannot store {other:?} tensors"))),
        };
        Ok(Self {
            name: name.into(),
            dtype: t.dtype(),
            dims: t.dims().to_vec(),
            bytes,
        })
    }

    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_raw_buffer(&self.bytes, self.dtype, &self.dims, device)?)
    }
}

/// Everything needed to reload a model or resume training.
#[derive(Debug, Clone)]
pub struct CheckpointRecord {
    pub format_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Number of completed epochs.
    pub epoch: usize,
    pub monitored_value: f64,
    pub optimizer_step: u64,
    pub early_stop: EarlyStopState,
    pub tensors: Vec<NamedTensor>,
}

impl CheckpointRecord {
    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Rebuilds the model and copies every stored parameter and buffer into
    /// it. Missing entries are an integrity error.
    pub fn restore_model(&self) -> Result<HybridSegmenter> {
        let dtype = self
            .tensors
            .first()
            .map(|t| t.dtype)
            .ok_or_else(|| Error::Integrity("checkpoint holds no tensors".into()))?;
        let cfg = ModelConfig {
            pretrained_backbone: None,
            ..self.model.clone()
        };
        let model = HybridSegmenter::new(&cfg, dtype, 0)?;
        let store = model.store();
        let names: Vec<String> = store
            .params()
            .chain(store.buffers())
            .map(|(n, _)| n.to_string())
            .collect();
        for name in names {
            let t = self
                .tensor(&name)
                .ok_or_else(|| Error::Integrity(format!("checkpoint lacks `{name}`")))?;
            store.assign(&name, &t.to_tensor(&Device::Cpu)?)?;
        }
        Ok(model)
    }
}

fn dtype_code(d: DType) -> Result<u8> {
    match d {
        DType::F32 => Ok(0),
        DType::F64 => Ok(1),
        other => Err(Error::Usage(format!("cannot store {other:?} tensors"))),
    }
}

fn put_u32(b: &mut Vec<u8>, v: u32) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(b: &mut Vec<u8>, v: u64) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(b: &mut Vec<u8>, v: f64) {
    b.extend_from_slice(&v.to_le_bytes());
}

/// Serialises a record to bytes.
pub fn encode(record: &CheckpointRecord) -> Result<Vec<u8>> {
    let model_cfg = record.model.to_kv_string();
    let train_cfg = record.train.to_kv_string();
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    put_u32(&mut b, record.format_version);
    put_u32(&mut b, model_cfg.len() as u32);
    put_u32(&mut b, train_cfg.len() as u32);
    b.extend_from_slice(model_cfg.as_bytes());
    b.extend_from_slice(train_cfg.as_bytes());
    put_u64(&mut b, record.epoch as u64);
    put_f64(&mut b, record.monitored_value);
    put_u64(&mut b, record.optimizer_step);
    let es = &record.early_stop;
    put_f64(&mut b, es.best_value);
    put_u64(&mut b, es.best_epoch as u64);
    put_u64(&mut b, es.epochs_since_improvement as u64);
    put_u64(&mut b, es.last_epoch as u64);
    put_u64(&mut b, es.patience as u64);
    put_f64(&mut b, es.min_delta);
    put_u32(&mut b, record.tensors.len() as u32);
    for t in &record.tensors {
        put_u32(&mut b, t.name.len() as u32);
        b.extend_from_slice(t.name.as_bytes());
        b.push(dtype_code(t.dtype)?);
        b.push(t.dims.len() as u8);
        for &d in &t.dims {
            put_u64(&mut b, d as u64);
        }
        b.extend_from_slice(&t.bytes);
    }
    let crc = crc32fast::hash(&b);
    put_u32(&mut b, crc);
    Ok(b)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Integrity(format!("truncated checkpoint at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Integrity("size overflows usize".into()))
    }

    fn text(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::Integrity("config text is not UTF-8".into()))
    }
}

/// Parses bytes produced by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<CheckpointRecord> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Integrity("missing HYBSEG header".into()));
    }
    let version = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < 14 {
        return Err(Error::Integrity("truncated checkpoint".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Integrity("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 10 };
    let model_len = r.u32()? as usize;
    let train_len = r.u32()? as usize;
    let model = ModelConfig::from_kv_str(r.text(model_len)?)?;
    let train = TrainConfig::from_kv_str(r.text(train_len)?)?;
    let epoch = r.usize()?;
    let monitored_value = r.f64()?;
    let optimizer_step = r.u64()?;
    let early_stop = EarlyStopState {
        best_value: r.f64()?,
        best_epoch: r.usize()?,
        epochs_since_improvement: r.usize()?,
        last_epoch: r.usize()?,
        patience: r.usize()?,
        min_delta: r.f64()?,
    };
    let n = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let name_len = r.u32()? as usize;
        let name = r.text(name_len)?.to_string();
        let (dtype, width) = match r.u8()? {
            0 => (DType::F32, 4),
            1 => (DType::F64, 8),
            c => return Err(Error::Integrity(format!("unknown dtype code {c} for `{name}`"))),
        };
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|c| c.checked_mul(width))
            .ok_or_else(|| Error::Integrity(format!("tensor `{name}` is too large")))?;
        let bytes = r.take(count)?.to_vec();
        tensors.push(NamedTensor {
            name,
            dtype,
            dims,
            bytes,
        });
    }
    if r.pos != body.len() {
        return Err(Error::Integrity("trailing bytes after tensor records".into()));
    }
    Ok(CheckpointRecord {
        format_version: version,
        model,
        train,
        epoch,
        monitored_value,
        optimizer_step,
        early_stop,
        tensors,
    })
}

pub fn save_checkpoint(record: &CheckpointRecord, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let bytes = encode(record)?;
    // write-then-rename so a crash never leaves a half-written checkpoint
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointRecord> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Tensor records of a checkpoint file.
pub fn read_named_tensors(path: &Path) -> Result<Vec<NamedTensor>> {
    Ok(load_checkpoint(path)?.tensors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> CheckpointRecord {
        let t = Tensor::new(&[[1.0f32, -2.5], [3.25, 0.0]], &Device::Cpu).unwrap();
        let u = Tensor::new(&[0.1f64, 0.2, 0.3], &Device::Cpu).unwrap();
        CheckpointRecord {
            format_version: FORMAT_VERSION,
            model: ModelConfig::toy(),
            train: TrainConfig {
                seed: 9,
                grad_clip: Some(2.0),
                ..TrainConfig::default()
            },
            epoch: 4,
            monitored_value: 0.8125,
            optimizer_step: 12,
            early_stop: EarlyStopState {
                best_value: 0.8125,
                best_epoch: 3,
                epochs_since_improvement: 1,
                last_epoch: 4,
                patience: 37,
                min_delta: 1e-4,
            },
            tensors: vec![
                NamedTensor::from_tensor("a", &t).unwrap(),
                NamedTensor::from_tensor("b", &u).unwrap(),
            ],
        }
    }

    #[test]
    fn roundtrip_preserves_fields() {
        let rec = record();
        let back = decode(&encode(&rec).unwrap()).unwrap();
        assert_eq!(back.model, rec.model);
        assert_eq!(back.train, rec.train);
        assert_eq!(back.early_stop, rec.early_stop);
        assert_eq!((back.epoch, back.optimizer_step), (4, 12));
        assert_eq!(back.monitored_value, 0.8125);
        assert_eq!(back.tensors, rec.tensors);
        let t: Vec<Vec<f32>> = back.tensors[0].to_tensor(&Device::Cpu).unwrap().to_vec2().unwrap();
        assert_eq!(t, vec![vec![1.0, -2.5], vec![3.25, 0.0]]);
    }

    #[test]
    fn future_version_is_rejected() {
        let mut rec = record();
        rec.format_version = FORMAT_VERSION + 1;
        match decode(&encode(&rec).unwrap()) {
            Err(Error::Version { found, expected }) => {
                assert_eq!((found, expected), (FORMAT_VERSION + 1, FORMAT_VERSION))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode(&record()).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(decode(&bytes), Err(Error::Integrity(_))));
        let bytes = encode(&record()).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 9]), Err(Error::Integrity(_))));
        assert!(matches!(decode(b"NOTACKPT00"), Err(Error::Integrity(_))));
    }
}
