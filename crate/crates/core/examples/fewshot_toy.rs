//! Few-shot segmentation of a generated toy dataset with the reference encoder.
//!
//!     cargo run --release --example fewshot_toy

use winseg::data::{write_toy_dataset, ToySpec};
use winseg::encoder::{Encoder, EncoderConfig};
use winseg::evaluation::{evaluate, EvalConfig};
use winseg::memory::FusionConfig;
use winseg::pipeline::PipelineConfig;
use winseg::prompt::PromptLibrary;

fn main() -> winseg::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| winseg::Error::io("tempdir", e))?;
    let manifest = write_toy_dataset(dir.path(), &ToySpec::default())?;
    let encoder = Encoder::reference(0, EncoderConfig::default())?;
    let config = PipelineConfig {
        fusion: FusionConfig {
            use_language: false,
            ..FusionConfig::default()
        },
        ..PipelineConfig::default()
    };
    let eval = EvalConfig {
        shots: vec![1],
        seeds: vec![0],
        ..EvalConfig::default()
    };
    let t = std::time::Instant::now();
    for shot in evaluate(&encoder, &manifest, &PromptLibrary::default(), &config, &eval)? {
        for (cat, row) in &shot.report.rows {
            let cells: Vec<String> = row.iter().map(|(m, s)| format!("{m}={:.4}", s.mean)).collect();
            println!("K={} {cat}: {}", shot.shots, cells.join(" "));
        }
    }
    eprintln!("{:.1?}", t.elapsed());
    Ok(())
}
