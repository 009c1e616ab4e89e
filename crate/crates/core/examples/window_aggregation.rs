//! Window plans on the patch grid and the per-patch harmonic aggregation of
//! window scores.
//!
//!     cargo run --example window_aggregation

use winseg::windows::{aggregate_windows, gen_windows, harmonic_mean_maps, Aggregation, Resolution, ScoreMap};

fn print(map: &ScoreMap) {
    for r in 0..map.height() {
        let row: Vec<String> = (0..map.width()).map(|c| format!("{:.3}", map.get(r, c))).collect();
        println!("  {}", row.join(" "));
    }
}

fn main() -> winseg::Result<()> {
    for k in [2, 3] {
        println!("15x15 grid, kernel {k}: {} windows", gen_windows((15, 15), k)?.len());
    }

    // one hot window among quiet ones
    let plan = gen_windows((5, 5), 2)?;
    let (h, w) = plan.dims();
    let mut values = vec![0.05; h * w];
    values[w + 1] = 0.95;
    let scores = ScoreMap::new(h, w, values, Resolution::Window(2))?;
    let harmonic = aggregate_windows(&scores, &plan, Aggregation::Harmonic)?;
    let arithmetic = aggregate_windows(&scores, &plan, Aggregation::Arithmetic)?;
    println!("harmonic:");
    print(&harmonic);
    println!("arithmetic:");
    print(&arithmetic);

    let image = ScoreMap::constant(5, 5, 0.5, Resolution::Patch)?;
    println!("combined with a constant image-scale map:");
    print(&harmonic_mean_maps(&[&harmonic, &image])?);
    Ok(())
}
