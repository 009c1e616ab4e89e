//! Sliding windows, zero-shot window scoring and the harmonic aggregation that
//! turns per-window scores into per-patch anomaly maps.
//!
//! A [`WindowPlan`] places a k×k window at every fully interior anchor with
//! stride one patch. Each window's embedding is scored against the class
//! prototypes, and every patch receives the harmonic mean of the scores of the
//! windows covering it, so one confidently normal window is enough to pull a
//! patch towards normal. Maps from several window sizes and the image-level
//! score are combined the same way.

use crate::encoder::{Encoder, FeatureOrigin, ImageTensor, PatchFeatureMap, WindowMask};
use crate::error::{contract, Error, Result};
use crate::prompt::ClassPrototypes;

/// Lower clamp applied to scores before any harmonic mean.
pub const SCORE_EPSILON: f64 = 1e-8;

/// All k×k windows of a grid, anchored row-major at every interior position.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPlan {
    grid: (usize, usize),
    kernel: usize,
    masks: Vec<WindowMask>,
}

pub fn gen_windows(grid: (usize, usize), kernel: usize) -> Result<WindowPlan> {
    let (gh, gw) = grid;
    contract!(
        kernel >= 1 && kernel <= gh.min(gw),
        "window kernel {kernel} must lie in 1..={} for grid {grid:?}",
        gh.min(gw)
    );
    let mut masks = Vec::with_capacity((gh - kernel + 1) * (gw - kernel + 1));
    for r in 0..=gh - kernel {
        for c in 0..=gw - kernel {
            masks.push(WindowMask::square(grid, (r, c), kernel)?);
        }
    }
    Ok(WindowPlan { grid, kernel, masks })
}

impl WindowPlan {
    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn masks(&self) -> &[WindowMask] {
        &self.masks
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Rows and columns of window anchors.
    pub fn dims(&self) -> (usize, usize) {
        (self.grid.0 - self.kernel + 1, self.grid.1 - self.kernel + 1)
    }

    /// Number of windows covering each patch, row-major.
    pub fn coverage(&self) -> Vec<usize> {
        let mut counts = vec![0; self.grid.0 * self.grid.1];
        for m in &self.masks {
            for &i in m.indices() {
                counts[i] += 1;
            }
        }
        counts
    }
}

/// What grid a [`ScoreMap`] lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Patch,
    /// One value per anchor of a k×k window plan.
    Window(usize),
    Pixel,
}

/// A row-major grid of anomaly scores in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    resolution: Resolution,
}

impl ScoreMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>, resolution: Resolution) -> Result<Self> {
        contract!(height > 0 && width > 0, "score map must be non-empty");
        contract!(
            values.len() == height * width,
            "score map {height}x{width} needs {} values, got {}",
            height * width,
            values.len()
        );
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!("score {v} lies outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            values,
            resolution,
        })
    }

    pub fn constant(height: usize, width: usize, value: f64, resolution: Resolution) -> Result<Self> {
        Self::new(height, width, vec![value; height * width], resolution)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn with_resolution(mut self, resolution: Resolution) -> Self {
        self.resolution = resolution;
        self
    }
}

/// Window kernels used for the small and mid scales, and whether the
/// image-level score joins the cross-scale mean.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ScaleSet {
    pub kernels: Vec<usize>,
    pub image_scale: bool,
}

impl Default for ScaleSet {
    fn default() -> Self {
        Self {
            kernels: vec![2, 3],
            image_scale: true,
        }
    }
}

impl ScaleSet {
    pub fn validate(&self, grid: (usize, usize)) -> Result<()> {
        let limit = grid.0.min(grid.1);
        for &k in &self.kernels {
            if k == 0 || k > limit {
                return Err(Error::Config(format!("window kernel {k} must lie in 1..={limit}")));
            }
        }
        if self.kernels.is_empty() && !self.image_scale {
            return Err(Error::Config("scale set has no scales".into()));
        }
        Ok(())
    }

    /// Parses `"2,3"`; a trailing `+image` (or `image` alone) enables the
    /// image scale, e.g. `"2,3+image"`.
    pub fn parse(text: &str) -> Result<Self> {
        let (list, image_scale) = match text.strip_suffix("+image") {
            Some(rest) => (rest, true),
            None if text == "image" => ("", true),
            None => (text, false),
        };
        let kernels = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad window kernel {s:?} in {text:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { kernels, image_scale })
    }
}

/// How overlapping window scores are combined per patch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Harmonic,
    /// Plain mean, for the ablation without harmonic averaging.
    Arithmetic,
}

/// Zero-shot score of every window embedding.
pub fn window_scores(features: &PatchFeatureMap, prototypes: &ClassPrototypes) -> Result<ScoreMap> {
    contract!(
        features.dim() == prototypes.dim(),
        "window features have dimension {} but prototypes have {}",
        features.dim(),
        prototypes.dim()
    );
    let values = features.vectors().map(|v| prototypes.score_unchecked(v)).collect();
    let resolution = match features.origin() {
        FeatureOrigin::Window(k) => Resolution::Window(k),
        FeatureOrigin::Penultimate => Resolution::Patch,
    };
    ScoreMap::new(features.rows(), features.cols(), values, resolution)
}

/// Per-patch weighted harmonic mean of the covering windows' scores.
pub fn harmonic_aggregate(scores: &ScoreMap, plan: &WindowPlan) -> Result<ScoreMap> {
    aggregate_windows(scores, plan, Aggregation::Harmonic)
}

pub fn aggregate_windows(scores: &ScoreMap, plan: &WindowPlan, how: Aggregation) -> Result<ScoreMap> {
    contract!(
        scores.values().len() == plan.len(),
        "{} window scores for a plan of {} windows",
        scores.values().len(),
        plan.len()
    );
    let (gh, gw) = plan.grid();
    let mut acc = vec![0.0f64; gh * gw];
    let mut count = vec![0usize; gh * gw];
    for (m, &s) in plan.masks().iter().zip(scores.values()) {
        let term = match how {
            Aggregation::Harmonic => 1.0 / s.max(SCORE_EPSILON),
            Aggregation::Arithmetic => s,
        };
        for &i in m.indices() {
            acc[i] += term;
            count[i] += 1;
        }
    }
    let mut values = Vec::with_capacity(gh * gw);
    for (i, (&a, &n)) in acc.iter().zip(&count).enumerate() {
        if n == 0 {
            return Err(Error::Coverage {
                row: i / gw,
                col: i % gw,
            });
        }
        let v = match how {
            Aggregation::Harmonic => n as f64 / a,
            Aggregation::Arithmetic => a / n as f64,
        };
        values.push(v.clamp(0.0, 1.0));
    }
    ScoreMap::new(gh, gw, values, Resolution::Patch)
}

fn check_same_dims(maps: &[&ScoreMap]) -> Result<(usize, usize)> {
    contract!(!maps.is_empty(), "no maps to combine");
    let dims = maps[0].dims();
    contract!(
        maps.iter().all(|m| m.dims() == dims),
        "maps to combine differ in shape: {:?}",
        maps.iter().map(|m| m.dims()).collect::<Vec<_>>()
    );
    Ok(dims)
}

/// Unweighted pixel-wise harmonic mean of equally sized maps.
pub fn harmonic_mean_maps(maps: &[&ScoreMap]) -> Result<ScoreMap> {
    let (h, w) = check_same_dims(maps)?;
    let n = maps.len() as f64;
    let values = (0..h * w)
        .map(|i| {
            let inv: f64 = maps.iter().map(|m| 1.0 / m.values[i].max(SCORE_EPSILON)).sum();
            (n / inv).clamp(0.0, 1.0)
        })
        .collect();
    ScoreMap::new(h, w, values, maps[0].resolution)
}

/// Unweighted pixel-wise arithmetic mean of equally sized maps.
pub fn mean_maps(maps: &[&ScoreMap]) -> Result<ScoreMap> {
    let (h, w) = check_same_dims(maps)?;
    let n = maps.len() as f64;
    let values = (0..h * w)
        .map(|i| (maps.iter().map(|m| m.values[i]).sum::<f64>() / n).clamp(0.0, 1.0))
        .collect();
    ScoreMap::new(h, w, values, maps[0].resolution)
}

/// Combines maps with the chosen rule.
pub fn combine_maps(maps: &[&ScoreMap], how: Aggregation) -> Result<ScoreMap> {
    match how {
        Aggregation::Harmonic => harmonic_mean_maps(maps),
        Aggregation::Arithmetic => mean_maps(maps),
    }
}

fn source_coord(dst: usize, scale: f64, len: usize) -> (usize, usize, f64) {
    let x = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
    let lo = x.floor() as usize;
    let hi = (lo + 1).min(len - 1);
    (lo, hi, x - lo as f64)
}

/// Bilinear resize treating each value as a sample at its cell center.
pub fn resize_map(map: &ScoreMap, height: usize, width: usize, resolution: Resolution) -> Result<ScoreMap> {
    contract!(height > 0 && width > 0, "cannot resize a map to zero size");
    let (h, w) = map.dims();
    if (h, w) == (height, width) {
        return Ok(map.clone().with_resolution(resolution));
    }
    let sy = h as f64 / height as f64;
    let sx = w as f64 / width as f64;
    let cols: Vec<(usize, usize, f64)> = (0..width).map(|x| source_coord(x, sx, w)).collect();
    let mut values = Vec::with_capacity(height * width);
    for y in 0..height {
        let (y0, y1, fy) = source_coord(y, sy, h);
        for &(x0, x1, fx) in &cols {
            let top = map.get(y0, x0) * (1.0 - fx) + map.get(y0, x1) * fx;
            let bottom = map.get(y1, x0) * (1.0 - fx) + map.get(y1, x1) * fx;
            values.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
        }
    }
    ScoreMap::new(height, width, values, resolution)
}

/// Bilinear upsampling of a patch-grid map to pixel resolution.
pub fn upsample_map(map: &ScoreMap, target: (usize, usize)) -> Result<ScoreMap> {
    contract!(
        target.0 >= map.height() && target.1 >= map.width(),
        "upsampling target {target:?} is smaller than the map {:?}",
        map.dims()
    );
    resize_map(map, target.0, target.1, Resolution::Pixel)
}

/// Crops whose zero-shot scores are averaged for classification.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CropScheme {
    #[default]
    Single,
    /// Center plus four corner crops of side `scale`·H.
    FiveCrop { scale: f64 },
}

impl CropScheme {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "none" | "single" => Ok(CropScheme::Single),
            "five" | "five-crop" => Ok(CropScheme::FiveCrop { scale: 0.9 }),
            other => match other.strip_prefix("five:") {
                Some(s) => {
                    let scale: f64 = s
                        .parse()
                        .map_err(|_| Error::Config(format!("bad crop scale in {other:?}")))?;
                    if !(scale > 0.0 && scale <= 1.0) {
                        return Err(Error::Config(format!("crop scale {scale} must lie in (0, 1]")));
                    }
                    Ok(CropScheme::FiveCrop { scale })
                }
                None => Err(Error::Config(format!(
                    "unknown crop scheme {other:?} (expected single, five or five:<scale>)"
                ))),
            },
        }
    }

    /// The crops of `img`, each resized back to `img`'s size.
    pub fn crops(&self, img: &ImageTensor) -> Result<Vec<ImageTensor>> {
        match *self {
            CropScheme::Single => Ok(vec![img.clone()]),
            CropScheme::FiveCrop { scale } => {
                let (h, w) = img.dims();
                let ch = ((h as f64 * scale).round() as usize).clamp(1, h);
                let cw = ((w as f64 * scale).round() as usize).clamp(1, w);
                let anchors = [
                    ((h - ch) / 2, (w - cw) / 2),
                    (0, 0),
                    (0, w - cw),
                    (h - ch, 0),
                    (h - ch, w - cw),
                ];
                anchors
                    .iter()
                    .map(|&(t, l)| img.crop(t, l, ch, cw)?.resize(h, w))
                    .collect()
            }
        }
    }
}

/// ascore₀: mean zero-shot score over the crops of `img`.
pub fn zero_shot_classify(
    encoder: &Encoder,
    img: &ImageTensor,
    prototypes: &ClassPrototypes,
    crops: CropScheme,
) -> Result<f64> {
    let crops = crops.crops(img)?;
    let mut total = 0.0;
    for c in &crops {
        total += prototypes.zero_shot_score(&encoder.encode_image_global(c)?)?;
    }
    Ok(total / crops.len() as f64)
}

/// Zero-shot score of every last-layer patch token.
pub fn patch_token_map(encoder: &Encoder, img: &ImageTensor, prototypes: &ClassPrototypes) -> Result<ScoreMap> {
    let patches = encoder.encode_patches(img)?;
    window_scores(&patches, prototypes)
}

/// Every feature one query image contributes, extracted once.
#[derive(Debug, Clone)]
pub struct ImageFeatures {
    pub global: Vec<f32>,
    pub patches: Option<PatchFeatureMap>,
    /// One map per window kernel, in the order requested.
    pub windows: Vec<PatchFeatureMap>,
}

impl ImageFeatures {
    pub fn extract(encoder: &Encoder, img: &ImageTensor, kernels: &[usize], with_patches: bool) -> Result<Self> {
        let (global, patches) = if with_patches {
            let (g, p) = encoder.encode_global_and_patches(img)?;
            (g, Some(p))
        } else {
            (encoder.encode_image_global(img)?, None)
        };
        let grid = encoder.config().grid;
        let windows = kernels
            .iter()
            .map(|&k| encoder.encode_windows_batched(img, gen_windows(grid, k)?.masks()))
            .collect::<Result<_>>()?;
        Ok(Self {
            global,
            patches,
            windows,
        })
    }

    pub fn window(&self, kernel: usize) -> Option<&PatchFeatureMap> {
        self.windows
            .iter()
            .find(|m| m.origin() == FeatureOrigin::Window(kernel))
    }

    pub fn grid(&self, encoder_grid: (usize, usize)) -> (usize, usize) {
        self.patches.as_ref().map_or(encoder_grid, PatchFeatureMap::dims)
    }
}

/// One scale's contribution to the zero-shot map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleComponent {
    Window(usize),
    Image,
}

/// The combined zero-shot map and the per-scale maps it was built from.
#[derive(Debug, Clone)]
pub struct ZeroShotMaps {
    pub combined: ScoreMap,
    pub components: Vec<(ScaleComponent, ScoreMap)>,
    /// Zero-shot score of the global embedding (the image-scale value).
    pub image_score: f64,
}

/// Multi-scale zero-shot map from pre-extracted features.
pub fn zero_shot_maps(
    features: &ImageFeatures,
    grid: (usize, usize),
    prototypes: &ClassPrototypes,
    scales: &ScaleSet,
    how: Aggregation,
) -> Result<ZeroShotMaps> {
    scales.validate(grid)?;
    let image_score = prototypes.zero_shot_score(&features.global)?;
    let mut components = Vec::with_capacity(scales.kernels.len() + 1);
    for &k in &scales.kernels {
        let feats = features
            .window(k)
            .ok_or_else(|| Error::Contract(format!("no window features for kernel {k}")))?;
        let plan = gen_windows(grid, k)?;
        contract!(
            feats.dims() == plan.dims(),
            "window features for kernel {k} have dims {:?}, expected {:?}",
            feats.dims(),
            plan.dims()
        );
        let scores = window_scores(feats, prototypes)?;
        components.push((ScaleComponent::Window(k), aggregate_windows(&scores, &plan, how)?));
    }
    if scales.image_scale {
        components.push((
            ScaleComponent::Image,
            ScoreMap::constant(grid.0, grid.1, image_score, Resolution::Patch)?,
        ));
    }
    let refs: Vec<&ScoreMap> = components.iter().map(|(_, m)| m).collect();
    let combined = combine_maps(&refs, how)?;
    Ok(ZeroShotMaps {
        combined,
        components,
        image_score,
    })
}

/// M̄₀ for one image: harmonic-aggregated window maps at every kernel, plus
/// the image-scale constant map, combined by harmonic mean.
pub fn multiscale_zero_shot_map(
    encoder: &Encoder,
    img: &ImageTensor,
    prototypes: &ClassPrototypes,
    scales: &ScaleSet,
) -> Result<ZeroShotMaps> {
    let features = ImageFeatures::extract(encoder, img, &scales.kernels, false)?;
    zero_shot_maps(
        &features,
        encoder.config().grid,
        prototypes,
        scales,
        Aggregation::Harmonic,
    )
}
