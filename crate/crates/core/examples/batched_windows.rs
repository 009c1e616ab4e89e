//! Window embeddings from one masked forward pass versus cropping and
//! re-encoding every window, with the token work each path costs.
//!
//!     cargo run --release --example batched_windows

use std::time::Instant;

use winseg::encoder::{Encoder, EncoderConfig, ImageTensor};
use winseg::linalg::dot;
use winseg::windows::gen_windows;

fn main() -> winseg::Result<()> {
    let encoder = Encoder::reference(0, EncoderConfig::default())?;
    let img = ImageTensor::from_fn(240, 240, |c, y, x| ((c * 7 + y * 3 + x) % 23) as f32 / 23.0 - 0.5);
    let grid = encoder.config().grid;
    for k in [2, 3] {
        let plan = gen_windows(grid, k)?;
        encoder.reset_token_work();
        let t = Instant::now();
        let batched = encoder.encode_windows_batched(&img, plan.masks())?;
        let (batched_ms, batched_tokens) = (t.elapsed().as_secs_f64() * 1e3, encoder.token_work());
        encoder.reset_token_work();
        let t = Instant::now();
        let tiled = encoder.encode_windows_by_tiling(&img, plan.masks())?;
        let (tiled_ms, tiled_tokens) = (t.elapsed().as_secs_f64() * 1e3, encoder.token_work());
        let agreement = batched
            .vectors()
            .zip(tiled.vectors())
            .map(|(a, b)| dot(a, b))
            .sum::<f64>()
            / batched.len() as f64;
        println!(
            "kernel {k}: {} windows, batched {batched_tokens} tokens {batched_ms:.1} ms, \
             tiling {tiled_tokens} tokens {tiled_ms:.1} ms, mean cosine {agreement:.3}",
            plan.len()
        );
    }
    Ok(())
}
