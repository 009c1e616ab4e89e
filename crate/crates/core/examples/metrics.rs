//! Image- and pixel-level metrics and a two-seed report.
//!
//!     cargo run --example metrics

use std::collections::BTreeMap;

use winseg::metrics::{
    aggregate_runs, aupr, auroc, connected_regions, f1_max, pixel_auroc, pro, LabeledScores, SeedRun, SegPair,
    PRO_FPR_LIMIT, PRO_THRESHOLDS,
};

fn main() -> winseg::Result<()> {
    let data = LabeledScores::new(
        vec![0.1, 0.4, 0.35, 0.8, 0.7, 0.2],
        vec![false, false, true, true, true, false],
    )?;
    let best = f1_max(&data)?;
    println!(
        "AUROC {:.4}  AUPR {:.4}  F1-max {:.4} at {}",
        auroc(&data)?,
        aupr(&data)?,
        best.score,
        best.threshold
    );

    #[rustfmt::skip]
    let mask = vec![
        true,  true,  false, false,
        true,  false, false, false,
        false, false, false, true,
        false, false, true,  true,
    ];
    println!("regions: {:?}", connected_regions(&mask, 4, 4));
    let scores: Vec<f64> = mask
        .iter()
        .enumerate()
        .map(|(i, &m)| if m { 0.9 } else { i as f64 / 40.0 })
        .collect();
    let pairs = [SegPair::new(4, 4, scores, mask)?];
    println!(
        "pixel AUROC {:.4}  PRO {:.4}",
        pixel_auroc(&pairs)?,
        pro(&pairs, PRO_FPR_LIMIT, PRO_THRESHOLDS)?
    );

    let runs: Vec<SeedRun> = [(0, 0.91, 0.80), (1, 0.95, 0.84)]
        .into_iter()
        .map(|(seed, a, b)| {
            let mut run = SeedRun::new(seed);
            run.push("bottle", BTreeMap::from([("image_auroc".to_string(), a)]));
            run.push("cable", BTreeMap::from([("image_auroc".to_string(), b)]));
            run
        })
        .collect();
    let report = aggregate_runs(&runs)?;
    print!("{}", report.to_csv(&serde_json::json!({"example": true}))?);
    Ok(())
}
