//! Square tiling of non-square images and merging of the per-tile maps.
//!
//!     cargo run --example tiling

use winseg::data::{merge_tile_predictions, plan_tiles};
use winseg::windows::{Resolution, ScoreMap};

fn main() -> winseg::Result<()> {
    for dims in [(240, 240), (240, 360), (360, 240), (240, 1000)] {
        let plan = plan_tiles(dims)?;
        println!("{dims:?}: side {}, anchors {:?}", plan.side, plan.anchors());
    }

    // two tiles, each with its own constant map, overlap averaged
    let plan = plan_tiles((4, 6))?;
    let maps = [
        ScoreMap::constant(4, 4, 0.2, Resolution::Pixel)?,
        ScoreMap::constant(4, 4, 0.6, Resolution::Pixel)?,
    ];
    let (merged, score) = merge_tile_predictions(&maps, &[0.3, 0.7], &plan)?;
    println!("merged row: {:?}, image score {score}", &merged.values()[..6]);
    Ok(())
}
