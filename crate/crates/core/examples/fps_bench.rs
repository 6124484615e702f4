//! Throughput of the toy model, next to a fixed-delay stub that shows what
//! the harness reports for a known 10 ms frame time.

use std::time::Duration;

use candle_core::DType;
use hybseg::metrics::{benchmark_segmenter, fps_benchmark};
use hybseg::{HybridSegmenter, ModelConfig};

fn main() -> hybseg::Result<()> {
    let stub = fps_benchmark(50, 5, |_| {
        std::thread::sleep(Duration::from_millis(10));
        Ok(())
    })?;
    println!("10 ms stub: {:.1} FPS ({:.2} ± {:.2} ms)", stub.fps, stub.mean_latency_ms, stub.std_latency_ms);

    let side: usize = std::env::args().nth(1).map(|s| s.parse().expect("side")).unwrap_or(128);
    let model = HybridSegmenter::new(&ModelConfig { input_size: (side, side), ..ModelConfig::toy() }, DType::F32, 0)?;
    let r = benchmark_segmenter(&model, (side, side), DType::F32, 20, 3)?;
    println!("toy model {side}x{side}: {:.1} FPS ({:.2} ± {:.2} ms)", r.fps, r.mean_latency_ms, r.std_latency_ms);
    Ok(())
}
