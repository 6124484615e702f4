//! Shifted-window partitioning, its attention mask and a masked attention pass.

use candle_core::{DType, Device, Tensor};
use hybseg::encoder::FeatureMap;
use hybseg::nn::VarBuilder;
use hybseg::window::{attention_mask, row_sums, window_partition, window_reverse, WindowAttention};

fn main() -> hybseg::Result<()> {
    let (h, w, ws, shift) = (10, 12, 4, 2);
    let x = Tensor::randn(0f32, 1.0, (1, 8, h, w), &Device::Cpu)?;
    let set = window_partition(&FeatureMap { data: x.clone(), stage: 1 }, ws, shift)?;
    let layout = set.layout;
    println!(
        "{h}x{w} map, window {ws}, shift {shift}: padded to {}x{}, {} windows of {} tokens",
        layout.padded_height(),
        layout.padded_width(),
        layout.windows_per_image(),
        layout.tokens_per_window()
    );

    let labels = layout.region_labels();
    for row in labels.chunks(layout.padded_width()) {
        println!("  {}", row.iter().map(|l| format!("{l:3}")).collect::<String>());
    }

    let attn = WindowAttention::new(&VarBuilder::new(DType::F32, Device::Cpu, 1), 8, 2, ws)?;
    let mask = attention_mask(&layout, DType::F32, &Device::Cpu)?;
    let (_, weights) = attn.attend(&set.data, mask.as_ref())?;
    let sums: Vec<f32> = row_sums(&weights)?.flatten_all()?.to_vec1()?;
    let worst = sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f32::max);
    println!("attention weights {:?}, max |row sum - 1| = {worst:.2e}", weights.dims());

    let back = window_reverse(&set)?;
    let same = x.flatten_all()?.to_vec1::<f32>()? == back.data.flatten_all()?.to_vec1::<f32>()?;
    println!("partition -> reverse exact: {same}");
    Ok(())
}
