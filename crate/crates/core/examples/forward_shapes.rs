//! Prints every intermediate shape of one forward pass.
//!
//! cargo run --release --example forward_shapes -- 64 96

use candle_core::{DType, Device, Tensor};
use hybseg::nn::NormMode;
use hybseg::{HybridSegmenter, ModelConfig};

fn main() -> hybseg::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("size"));
    let h = args.next().unwrap_or(64);
    let w = args.next().unwrap_or(h);
    let cfg = ModelConfig::toy();
    let model = HybridSegmenter::new(&cfg, DType::F32, 0)?;
    println!("{} parameter tensors, {} values", model.store().num_params(), model.store().num_elements());

    let x = Tensor::randn(0f32, 1.0, (2, 3, h, w), &Device::Cpu)?;
    let (trace, _) = model.forward_trace(&x, NormMode::Eval)?;
    for f in trace.pyramid.levels() {
        println!("encoder stage {}: {:?}", f.stage, f.dims());
    }
    let d = &trace.decoder;
    for f in [&d.d4, &d.d3, &d.d2, &d.d1] {
        println!("decoder D{}: {:?}", f.stage, f.dims());
    }
    println!("head:   {:?}", trace.head.data.dims());
    println!("logits: {:?}", trace.logits.data.dims());
    Ok(())
}
