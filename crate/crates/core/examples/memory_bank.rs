//! Few-shot reference memory: seeded reference selection, bank construction,
//! persistence and nearest-neighbour association.
//!
//!     cargo run --release --example memory_bank

use winseg::data::{preprocess, sample_references, selection_digest, write_toy_dataset, ToySpec, SAMPLER_NAME};
use winseg::encoder::{Encoder, EncoderConfig};
use winseg::memory::{associate, ReferenceMemory};
use winseg::pipeline::{Detector, PipelineConfig};
use winseg::prompt::PromptLibrary;

fn main() -> winseg::Result<()> {
    let tmp = tempfile::tempdir().map_err(|e| winseg::Error::io("tempdir", e))?;
    let manifest = write_toy_dataset(tmp.path().join("data"), &ToySpec::default())?;
    let cat = manifest.category("tile")?;

    let ids = sample_references(&manifest, "tile", 2, 7)?;
    println!("{SAMPLER_NAME}: {ids:?} ({})", selection_digest(&ids));

    let encoder = Encoder::reference(0, EncoderConfig::default())?;
    let scorer = Detector::from_prompts(&encoder, "tile", &PromptLibrary::default(), PipelineConfig::default())?;
    let refs = ids
        .iter()
        .map(|id| {
            let s = cat.train.iter().find(|s| &s.id == id).expect("sampled from train");
            preprocess(&s.path, &scorer.config().preprocess).map(|p| p.tensor)
        })
        .collect::<winseg::Result<Vec<_>>>()?;
    let memory = scorer.build_memory(&refs, ids, Some(7))?;
    for bank in memory.banks() {
        println!("bank {:<10} {} x {}", bank.name(), bank.len(), bank.dim());
    }

    let dir = tmp.path().join("memory");
    memory.save(&dir)?;
    let loaded = ReferenceMemory::load(&dir)?;
    assert_eq!(loaded, memory);
    println!("saved and reloaded from {}", dir.display());

    let query = cat.test.iter().find(|s| s.mask.is_some()).expect("toy set has defects");
    let img = preprocess(&query.path, &scorer.config().preprocess)?;
    let patches = encoder.encode_patches(&img.tensor)?;
    let map = associate(&patches, &loaded.patch)?;
    println!(
        "patch association for {}: max {:.4}, min {:.4}",
        query.id,
        map.max(),
        map.min()
    );

    let pred = scorer.with_memory(loaded)?.score(&img)?;
    println!("few-shot score {:.4}", pred.score);
    Ok(())
}
