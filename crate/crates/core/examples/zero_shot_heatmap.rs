//! Zero-shot scoring of one image and export of its 16-bit heatmap.
//!
//!     cargo run --release --example zero_shot_heatmap -- [image.png] [out.png]
//!
//! Without arguments a defective toy image is generated and scored.

use std::path::PathBuf;

use winseg::data::{export_heatmap, preprocess, read_heatmap, write_toy_dataset, ToySpec};
use winseg::encoder::{Encoder, EncoderConfig};
use winseg::pipeline::{Detector, PipelineConfig};
use winseg::prompt::PromptLibrary;

fn main() -> winseg::Result<()> {
    let tmp = tempfile::tempdir().map_err(|e| winseg::Error::io("tempdir", e))?;
    let mut args = std::env::args().skip(1);
    let input = match args.next() {
        Some(p) => PathBuf::from(p),
        None => {
            let spec = ToySpec {
                width: 360,
                ..ToySpec::default()
            };
            let manifest = write_toy_dataset(tmp.path(), &spec)?;
            let cat = manifest.category("tile")?;
            cat.test
                .iter()
                .find(|s| s.mask.is_some())
                .expect("toy set has defects")
                .path
                .clone()
        }
    };
    let out = args
        .next()
        .map_or_else(|| tmp.path().join("heatmap.png"), PathBuf::from);

    let encoder = Encoder::reference(0, EncoderConfig::default())?;
    let scorer = Detector::from_prompts(&encoder, "tile", &PromptLibrary::default(), PipelineConfig::default())?;
    let img = preprocess(&input, &scorer.config().preprocess)?;
    let pred = scorer.score(&img)?;
    let map = pred.map_at(img.original)?;
    export_heatmap(&map, &out)?;
    let back = read_heatmap(&out)?;
    println!("{}: score {:.4}, {} tile(s)", input.display(), pred.score, pred.tiles);
    println!(
        "map {:?} in [{:.4}, {:.4}] -> {}",
        back.dims(),
        map.min(),
        map.max(),
        out.display()
    );
    Ok(())
}
