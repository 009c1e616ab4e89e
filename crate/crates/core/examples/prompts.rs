//! Compositional prompt ensemble and the class prototypes it produces.
//!
//!     cargo run --example prompts -- bottle

use winseg::encoder::{Encoder, EncoderConfig};
use winseg::linalg::norm;
use winseg::prompt::{build_prototypes, PromptLibrary, DEFAULT_TEMPERATURE};

fn main() -> winseg::Result<()> {
    let object = std::env::args().nth(1).unwrap_or_else(|| "bottle".into());
    let library = PromptLibrary::default();
    let sets = library.compose(&object)?;
    println!("{} normal, {} anomalous prompts", sets.normal.len(), sets.anomaly.len());
    for p in sets.normal.iter().take(2).chain(sets.anomaly.iter().take(2)) {
        println!("  {p}");
    }
    for (states, templates) in [(false, true), (true, false), (false, false)] {
        let s = library.ablated(states, templates).compose(&object)?;
        println!(
            "states={states} templates={templates}: {}+{}",
            s.normal.len(),
            s.anomaly.len()
        );
    }

    let encoder = Encoder::reference(0, EncoderConfig::default())?;
    let protos = build_prototypes(&sets, &encoder, DEFAULT_TEMPERATURE)?;
    println!(
        "prototype dim {}, norms {:.6} / {:.6}",
        protos.dim(),
        norm(&protos.normal),
        norm(&protos.anomaly)
    );
    println!(
        "score of the normal prototype itself: {:.4}",
        protos.zero_shot_score(&protos.normal)?
    );
    println!(
        "score of the anomaly prototype itself: {:.4}",
        protos.zero_shot_score(&protos.anomaly)?
    );
    Ok(())
}
