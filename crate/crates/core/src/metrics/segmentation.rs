use serde::{Deserialize, Serialize};

use super::classification::{auroc_raw, f1_max_raw, F1Max};
use crate::error::{contract, Error, Result};
use crate::windows::ScoreMap;

/// A predicted pixel map and its ground-truth mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SegPair {
    height: usize,
    width: usize,
    scores: Vec<f64>,
    mask: Vec<bool>,
}

impl SegPair {
    pub fn new(height: usize, width: usize, scores: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        contract!(height > 0 && width > 0, "segmentation pair must be non-empty");
        contract!(
            scores.len() == height * width && mask.len() == height * width,
            "prediction ({}) and mask ({}) must both hold {height}x{width} pixels",
            scores.len(),
            mask.len()
        );
        contract!(scores.iter().all(|s| s.is_finite()), "pixel scores must be finite");
        Ok(Self {
            height,
            width,
            scores,
            mask,
        })
    }

    pub fn from_map(map: &ScoreMap, mask: Vec<bool>) -> Result<Self> {
        Self::new(map.height(), map.width(), map.values().to_vec(), mask)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
}

/// Whether pixel metrics pool all pixels of a category or average per image.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelPooling {
    #[default]
    Pooled,
    PerImage,
}

fn pooled(pairs: &[SegPair]) -> Result<(Vec<f64>, Vec<bool>)> {
    contract!(!pairs.is_empty(), "no segmentation pairs");
    let n: usize = pairs.iter().map(|p| p.scores.len()).sum();
    let mut scores = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for p in pairs {
        scores.extend_from_slice(&p.scores);
        labels.extend_from_slice(&p.mask);
    }
    Ok((scores, labels))
}

fn per_image(pairs: &[SegPair], metric: impl Fn(&SegPair) -> Result<f64>, what: &str) -> Result<f64> {
    let mut values = Vec::new();
    for p in pairs {
        match metric(p) {
            Ok(v) => values.push(v),
            Err(Error::Degenerate(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if values.is_empty() {
        return Err(Error::Degenerate(format!("no image has a defined {what}")));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// AUROC over all pixels of all images.
pub fn pixel_auroc(pairs: &[SegPair]) -> Result<f64> {
    let (s, l) = pooled(pairs)?;
    auroc_raw(&s, &l)
}

pub fn pixel_auroc_with(pairs: &[SegPair], pooling: PixelPooling) -> Result<f64> {
    match pooling {
        PixelPooling::Pooled => pixel_auroc(pairs),
        PixelPooling::PerImage => per_image(pairs, |p| auroc_raw(&p.scores, &p.mask), "pixel AUROC"),
    }
}

/// F1-max over all pixels of all images.
pub fn pixel_f1_max(pairs: &[SegPair]) -> Result<F1Max> {
    let (s, l) = pooled(pairs)?;
    f1_max_raw(&s, &l)
}

pub fn pixel_f1_max_with(pairs: &[SegPair], pooling: PixelPooling) -> Result<f64> {
    match pooling {
        PixelPooling::Pooled => pixel_f1_max(pairs).map(|f| f.score),
        PixelPooling::PerImage => per_image(pairs, |p| f1_max_raw(&p.scores, &p.mask).map(|f| f.score), "pixel F1"),
    }
}

/// 8-connected components of a mask, each as sorted pixel indices.
pub fn connected_regions(mask: &[bool], height: usize, width: usize) -> Vec<Vec<usize>> {
    let mut label = vec![usize::MAX; mask.len()];
    let mut regions = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || label[start] != usize::MAX {
            continue;
        }
        let id = regions.len();
        let mut region = Vec::new();
        label[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            region.push(i);
            let (y, x) = ((i / width) as isize, (i % width) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= height as isize || nx >= width as isize {
                        continue;
                    }
                    let j = ny as usize * width + nx as usize;
                    if mask[j] && label[j] == usize::MAX {
                        label[j] = id;
                        stack.push(j);
                    }
                }
            }
        }
        region.sort_unstable();
        regions.push(region);
    }
    regions
}

/// Count of values ≥ t in an ascending slice.
fn at_least(sorted: &[f64], t: f64) -> usize {
    sorted.len() - sorted.partition_point(|&v| v < t)
}

/// Points (FPR, PRO) at `n_thresholds` thresholds evenly spaced from the
/// highest to the lowest score, plus the end points (0, 0) and (1, 1), sorted.
pub fn pro_curve(pairs: &[SegPair], n_thresholds: usize) -> Result<Vec<(f64, f64)>> {
    contract!(!pairs.is_empty(), "no segmentation pairs");
    contract!(n_thresholds >= 1, "PRO needs at least one threshold");
    let mut regions: Vec<Vec<f64>> = Vec::new();
    let mut normal: Vec<f64> = Vec::new();
    for p in pairs {
        for r in connected_regions(&p.mask, p.height, p.width) {
            regions.push(r.iter().map(|&i| p.scores[i]).collect());
        }
        normal.extend(p.scores.iter().zip(&p.mask).filter(|(_, &m)| !m).map(|(&s, _)| s));
    }
    if regions.is_empty() {
        return Err(Error::Degenerate("PRO needs at least one ground-truth region".into()));
    }
    if normal.is_empty() {
        return Err(Error::Degenerate(
            "PRO needs normal pixels to measure false positives".into(),
        ));
    }
    normal.sort_unstable_by(f64::total_cmp);
    for r in &mut regions {
        r.sort_unstable_by(f64::total_cmp);
    }
    let all = pairs.iter().flat_map(|p| p.scores.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let mut curve = Vec::with_capacity(n_thresholds + 2);
    curve.push((0.0, 0.0));
    for i in 0..n_thresholds {
        let t = if n_thresholds == 1 {
            hi
        } else {
            hi + (lo - hi) * i as f64 / (n_thresholds - 1) as f64
        };
        let fpr = at_least(&normal, t) as f64 / normal.len() as f64;
        let overlap: f64 = regions.iter().map(|r| at_least(r, t) as f64 / r.len() as f64).sum();
        curve.push((fpr, overlap / regions.len() as f64));
    }
    curve.push((1.0, 1.0));
    curve.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    Ok(curve)
}

/// Trapezoid area under a sorted curve from x = 0 to `x_max`, interpolating
/// the last segment at `x_max`.
pub fn trapezoid(curve: &[(f64, f64)], x_max: f64) -> f64 {
    let mut area = 0.0;
    for seg in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (seg[0], seg[1]);
        if x0 >= x_max {
            break;
        }
        if x1 <= x_max {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y = y0 + (y1 - y0) * (x_max - x0) / (x1 - x0);
            area += (x_max - x0) * (y0 + y) / 2.0;
            break;
        }
    }
    area
}

/// Area under the PRO curve up to `fpr_limit`, divided by `fpr_limit`.
pub fn pro(pairs: &[SegPair], fpr_limit: f64, n_thresholds: usize) -> Result<f64> {
    contract!(
        fpr_limit > 0.0 && fpr_limit <= 1.0,
        "FPR limit {fpr_limit} must lie in (0, 1]"
    );
    let curve = pro_curve(pairs, n_thresholds)?;
    Ok((trapezoid(&curve, fpr_limit) / fpr_limit).clamp(0.0, 1.0))
}

pub fn pro_with(pairs: &[SegPair], fpr_limit: f64, n_thresholds: usize, pooling: PixelPooling) -> Result<f64> {
    match pooling {
        PixelPooling::Pooled => pro(pairs, fpr_limit, n_thresholds),
        PixelPooling::PerImage => per_image(pairs, |p| pro(std::slice::from_ref(p), fpr_limit, n_thresholds), "PRO"),
    }
}
