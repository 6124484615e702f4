//! Inference throughput measurement.

use std::time::{Duration, Instant};

use candle_core::{DType, Device, Tensor};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Segmenter;

/// Throughput of a timed run.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FpsReport {
    pub frames: usize,
    pub warmup: usize,
    pub elapsed_seconds: f64,
    pub fps: f64,
    pub mean_latency_ms: f64,
    pub std_latency_ms: f64,
}

impl FpsReport {
    /// Builds a report from the per-frame latencies of the timed frames and
    /// the wall time spent on them.
    pub fn from_latencies(latencies: &[Duration], wall: Duration, warmup: usize) -> Result<Self> {
        if latencies.is_empty() {
            return Err(Error::Parameter("at least one timed frame is required".into()));
        }
        let secs = wall.as_secs_f64();
        let ms: Vec<f64> = latencies.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        let n = ms.len() as f64;
        let mean = ms.iter().sum::<f64>() / n;
        let var = if ms.len() > 1 {
            ms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Ok(Self {
            frames: latencies.len(),
            warmup,
            elapsed_seconds: secs,
            fps: if secs > 0.0 { n / secs } else { f64::INFINITY },
            mean_latency_ms: mean,
            std_latency_ms: var.sqrt(),
        })
    }
}

/// Calls `forward(frame_index)` `warmup` times untimed, then `frames` times
/// timed. A failing forward aborts with the index of the offending frame
/// (warm-up frames count first).
pub fn fps_benchmark<F>(frames: usize, warmup: usize, mut forward: F) -> Result<FpsReport>
where
    F: FnMut(usize) -> Result<()>,
{
    if frames == 0 {
        return Err(Error::Parameter("at least one timed frame is required".into()));
    }
    let wrap = |frame: usize, e: Error| Error::Frame {
        frame,
        source: Box::new(e),
    };
    for i in 0..warmup {
        forward(i).map_err(|e| wrap(i, e))?;
    }
    let mut latencies = Vec::with_capacity(frames);
    let start = Instant::now();
    for i in 0..frames {
        let t = Instant::now();
        forward(warmup + i).map_err(|e| wrap(warmup + i, e))?;
        latencies.push(t.elapsed());
    }
    FpsReport::from_latencies(&latencies, start.elapsed(), warmup)
}

/// Times single-image predictions on a fixed random input of `size`.
pub fn benchmark_segmenter(
    model: &dyn Segmenter,
    size: (usize, usize),
    dtype: DType,
    frames: usize,
    warmup: usize,
) -> Result<FpsReport> {
    let x = Tensor::randn(0f32, 1.0, (1, 3, size.0, size.1), &Device::Cpu)?.to_dtype(dtype)?;
    fps_benchmark(frames, warmup, |_| {
        let y = model.predict(&x)?;
        // force evaluation of the whole output
        let _ = y.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_frames_in_two_seconds() {
        let lat = vec![Duration::from_millis(20); 100];
        let r = FpsReport::from_latencies(&lat, Duration::from_secs(2), 10).unwrap();
        assert!((r.fps - 50.0).abs() < 1e-12);
        assert!((r.mean_latency_ms - 20.0).abs() < 1e-9);
        assert!(r.std_latency_ms.abs() < 1e-9);
    }

    #[test]
    fn counts_calls() {
        let mut calls = 0;
        let r = fps_benchmark(5, 3, |_| {
            calls += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(calls, 8);
        assert_eq!((r.frames, r.warmup), (5, 3));
    }

    #[test]
    fn failure_names_frame() {
        let err = fps_benchmark(5, 2, |i| {
            if i == 4 {
                Err(Error::Usage("boom".into()))
            } else {
                Ok(())
            }
        })
        .unwrap_err();
        assert!(matches!(err, Error::Frame { frame: 4, .. }));
    }

    #[test]
    fn zero_frames_rejected() {
        assert!(fps_benchmark(0, 1, |_| Ok(())).is_err());
    }
}
