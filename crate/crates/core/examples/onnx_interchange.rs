//! Loading an exported model directory (config.json, text.onnx, image.onnx)
//! and running both towers.
//!
//!     cargo run --example onnx_interchange -- [model_dir]

use std::path::PathBuf;

use winseg::encoder::{Encoder, ImageTensor, OnnxBackbone};
use winseg::linalg::norm;

fn main() -> winseg::Result<()> {
    let dir = std::env::args().nth(1).map_or_else(
        || PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny_clip"),
        PathBuf::from,
    );
    let backbone = OnnxBackbone::load(&dir)?;
    println!("text graph ops:  {:?}", backbone.text_graph().operators());
    println!("image graph ops: {:?}", backbone.image_graph().operators());

    let encoder = Encoder::new(backbone)?;
    let cfg = *encoder.config();
    println!("{cfg:?}");
    let text = encoder.encode_text("a good part.")?;
    let img = ImageTensor::from_fn(cfg.input_resolution, cfg.input_resolution, |c, y, x| {
        ((c + y * 5 + x * 3) % 11) as f32 / 11.0
    });
    let (global, patches) = encoder.encode_global_and_patches(&img)?;
    println!("text embedding dim {} (norm {:.3})", text.len(), norm(&text));
    println!("image embedding dim {} (norm {:.3})", global.len(), norm(&global));
    println!("patch tokens {:?} x {}", patches.dims(), patches.dim());
    Ok(())
}
