use crate::error::{contract, Error, Result};
use crate::windows::{Resolution, ScoreMap};

/// A square crop of side [`TilePlan::side`] at `(top, left)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tile {
    pub top: usize,
    pub left: usize,
}

/// Square tiles of the shorter edge that cover an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlan {
    pub dims: (usize, usize),
    pub side: usize,
    pub tiles: Vec<Tile>,
}

impl TilePlan {
    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    /// Anchors along the long axis.
    pub fn anchors(&self) -> Vec<usize> {
        self.tiles
            .iter()
            .map(|t| if self.dims.0 > self.dims.1 { t.top } else { t.left })
            .collect()
    }
}

fn anchors(span: usize, n: usize) -> Vec<usize> {
    if n == 1 {
        return vec![0];
    }
    (0..n).map(|i| i * span / (n - 1)).collect()
}

/// Tiles for an image of `dims` = (H, W): `ceil((L−Lₛ)/(0.8·Lₛ)) + 1` anchors
/// spread evenly (floored) from 0 to `L−Lₛ` along the long axis. When flooring
/// would leave a gap wider than `0.8·Lₛ`, one more tile is added.
pub fn plan_tiles(dims: (usize, usize)) -> Result<TilePlan> {
    let (h, w) = dims;
    contract!(h > 0 && w > 0, "cannot tile an empty image");
    let side = h.min(w);
    let span = h.max(w) - side;
    contract!(
        span == 0 || 4 * side >= 5,
        "a {h}x{w} image is too small to tile with 20% overlap"
    );
    // gap ≤ 0.8·side ⇔ 5·gap ≤ 4·side
    let mut n = (5 * span).div_ceil(4 * side) + 1;
    let mut a = anchors(span, n);
    while a.windows(2).any(|p| 5 * (p[1] - p[0]) > 4 * side) {
        n += 1;
        a = anchors(span, n);
    }
    let tiles = a
        .into_iter()
        .map(|x| {
            if h > w {
                Tile { top: x, left: 0 }
            } else {
                Tile { top: 0, left: x }
            }
        })
        .collect();
    Ok(TilePlan { dims, side, tiles })
}

/// Averages per-tile pixel maps over the pixels each covers, and the per-tile
/// classification scores.
pub fn merge_tile_predictions(maps: &[ScoreMap], scores: &[f64], plan: &TilePlan) -> Result<(ScoreMap, f64)> {
    contract!(
        maps.len() == plan.len() && scores.len() == plan.len(),
        "{} maps and {} scores for {} tiles",
        maps.len(),
        scores.len(),
        plan.len()
    );
    let (h, w) = plan.dims;
    let mut sum = vec![0.0; h * w];
    let mut count = vec![0u32; h * w];
    for (m, t) in maps.iter().zip(&plan.tiles) {
        contract!(
            m.dims() == (plan.side, plan.side),
            "tile map is {:?}, expected {}x{}",
            m.dims(),
            plan.side,
            plan.side
        );
        contract!(
            t.top + plan.side <= h && t.left + plan.side <= w,
            "tile leaves the image"
        );
        for y in 0..plan.side {
            let row = (t.top + y) * w + t.left;
            for x in 0..plan.side {
                sum[row + x] += m.get(y, x);
                count[row + x] += 1;
            }
        }
    }
    if let Some(i) = count.iter().position(|&c| c == 0) {
        return Err(Error::Contract(format!(
            "pixel ({}, {}) is covered by no tile",
            i / w,
            i % w
        )));
    }
    let values = sum.iter().zip(&count).map(|(s, &c)| s / f64::from(c)).collect();
    let score = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok((ScoreMap::new(h, w, values, Resolution::Pixel)?, score))
}
