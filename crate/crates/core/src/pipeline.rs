//! End-to-end scoring of preprocessed images, zero-shot or with a reference
//! memory. Non-square inputs are split into overlapping square tiles whose
//! predictions are averaged back onto the full image.

use serde::{Deserialize, Serialize};

use crate::data::{merge_tile_predictions, plan_tiles, PreprocessSpec, Preprocessed, TilePlan};
use crate::encoder::Encoder;
use crate::error::{contract, Error, Result};
use crate::memory::{fuse_plus, memory_from_features, FusionConfig, Provenance, ReferenceMemory};
use crate::prompt::{build_prototypes, ClassPrototypes, PromptLibrary, DEFAULT_TEMPERATURE};
use crate::tensor::ImageTensor;
use crate::windows::{
    resize_map, upsample_map, zero_shot_classify, zero_shot_maps, Aggregation, CropScheme, ImageFeatures, Resolution,
    ScaleSet, ScoreMap,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub preprocess: PreprocessSpec,
    pub scales: ScaleSet,
    pub aggregation: Aggregation,
    pub crops: CropScheme,
    pub temperature: f64,
    pub fusion: FusionConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessSpec::default(),
            scales: ScaleSet::default(),
            aggregation: Aggregation::Harmonic,
            crops: CropScheme::Single,
            temperature: DEFAULT_TEMPERATURE,
            fusion: FusionConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Checks the config against the encoder geometry.
    pub fn validate(&self, encoder: &Encoder) -> Result<()> {
        let cfg = encoder.config();
        self.preprocess.validate(cfg.patch_size)?;
        if self.preprocess.target != cfg.input_resolution {
            return Err(Error::Config(format!(
                "preprocess target {} differs from the encoder input resolution {}",
                self.preprocess.target, cfg.input_resolution
            )));
        }
        self.scales.validate(cfg.grid)?;
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        self.fusion.validate()
    }
}

/// Image score and pixel map at the preprocessed resolution.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub score: f64,
    pub map: ScoreMap,
    /// Square tiles the image was split into (1 for square inputs).
    pub tiles: usize,
}

impl Prediction {
    /// The map resized to another pixel size, e.g. the image's original size.
    pub fn map_at(&self, dims: (usize, usize)) -> Result<ScoreMap> {
        resize_map(&self.map, dims.0, dims.1, Resolution::Pixel)
    }
}

#[derive(Debug, Clone)]
struct TileFeatures {
    features: ImageFeatures,
    ascore0: f64,
}

/// Encoded tiles of one query image.
#[derive(Debug, Clone)]
pub struct QueryFeatures {
    plan: TilePlan,
    tiles: Vec<TileFeatures>,
}

impl QueryFeatures {
    pub fn dims(&self) -> (usize, usize) {
        self.plan.dims
    }

    pub fn tiles(&self) -> usize {
        self.plan.len()
    }
}

/// Square crops covering `img` along its longer side.
pub fn square_tiles(img: &ImageTensor) -> Result<Vec<ImageTensor>> {
    let plan = plan_tiles(img.dims())?;
    plan.tiles
        .iter()
        .map(|t| img.crop(t.top, t.left, plan.side, plan.side))
        .collect()
}

/// Scorer bound to one encoder, one object's prototypes and optionally a memory.
#[derive(Debug)]
pub struct Detector<'e> {
    encoder: &'e Encoder,
    prototypes: ClassPrototypes,
    config: PipelineConfig,
    memory: Option<ReferenceMemory>,
}

impl<'e> Detector<'e> {
    pub fn new(encoder: &'e Encoder, prototypes: ClassPrototypes, config: PipelineConfig) -> Result<Self> {
        config.validate(encoder)?;
        contract!(
            prototypes.dim() == encoder.config().embed_dim,
            "prototypes have dimension {} but the encoder embeds to {}",
            prototypes.dim(),
            encoder.config().embed_dim
        );
        Ok(Self {
            encoder,
            prototypes,
            config,
            memory: None,
        })
    }

    /// Composes the prompts for `object_label` and embeds them.
    pub fn from_prompts(
        encoder: &'e Encoder,
        object_label: &str,
        library: &PromptLibrary,
        config: PipelineConfig,
    ) -> Result<Self> {
        let prompts = library.compose(object_label)?;
        let prototypes = build_prototypes(&prompts, encoder, config.temperature)?;
        Self::new(encoder, prototypes, config)
    }

    pub fn encoder(&self) -> &Encoder {
        self.encoder
    }

    pub fn prototypes(&self) -> &ClassPrototypes {
        &self.prototypes
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn memory(&self) -> Option<&ReferenceMemory> {
        self.memory.as_ref()
    }

    /// Attaches a memory; scoring then follows the few-shot path.
    pub fn with_memory(mut self, memory: ReferenceMemory) -> Result<Self> {
        let fp = self.encoder.fingerprint();
        if memory.provenance.encoder_fingerprint != fp {
            return Err(Error::Config(format!(
                "memory was built with encoder {} but the current encoder is {fp}",
                memory.provenance.encoder_fingerprint
            )));
        }
        contract!(
            memory.patch.dim() == self.prototypes.dim(),
            "memory vectors have dimension {}, prototypes {}",
            memory.patch.dim(),
            self.prototypes.dim()
        );
        self.memory = Some(memory);
        Ok(self)
    }

    pub fn without_memory(mut self) -> Self {
        self.memory = None;
        self
    }

    /// Encodes normal references into a memory. Non-square references
    /// contribute every tile.
    pub fn build_memory(
        &self,
        refs: &[ImageTensor],
        reference_ids: Vec<String>,
        seed: Option<u64>,
    ) -> Result<ReferenceMemory> {
        contract!(!refs.is_empty(), "at least one reference image is required");
        let mut features = Vec::new();
        for img in refs {
            for tile in square_tiles(img)? {
                features.push(ImageFeatures::extract(
                    self.encoder,
                    &tile,
                    &self.config.scales.kernels,
                    true,
                )?);
            }
        }
        let provenance = Provenance {
            k: refs.len(),
            reference_ids,
            seed,
            encoder_fingerprint: self.encoder.fingerprint(),
        };
        memory_from_features(&features, &self.config.scales, provenance)
    }

    fn kernels(&self) -> Vec<usize> {
        let mut kernels = self.config.scales.kernels.clone();
        if let Some(m) = &self.memory {
            let extra = self.config.fusion.window_kernels.clone().unwrap_or_else(|| m.kernels());
            for k in extra {
                if !kernels.contains(&k) {
                    kernels.push(k);
                }
            }
        }
        kernels
    }

    /// Encodes every tile of an image whose shorter side equals the encoder
    /// resolution. The result can be scored repeatedly, e.g. against several
    /// memories.
    pub fn extract(&self, img: &ImageTensor) -> Result<QueryFeatures> {
        let side = self.encoder.config().input_resolution;
        let (h, w) = img.dims();
        if h.min(w) != side {
            return Err(Error::Config(format!(
                "image is {h}x{w}; its shorter side must equal the encoder resolution {side}"
            )));
        }
        let plan = plan_tiles((h, w))?;
        let kernels = self.kernels();
        let mut tiles = Vec::with_capacity(plan.len());
        for t in &plan.tiles {
            let tile = img.crop(t.top, t.left, side, side)?;
            let features = ImageFeatures::extract(self.encoder, &tile, &kernels, true)?;
            let ascore0 = match self.config.crops {
                CropScheme::Single => self.prototypes.zero_shot_score(&features.global)?,
                crops => zero_shot_classify(self.encoder, &tile, &self.prototypes, crops)?,
            };
            tiles.push(TileFeatures { features, ascore0 });
        }
        Ok(QueryFeatures { plan, tiles })
    }

    fn score_tile(&self, tile: &TileFeatures, side: usize) -> Result<(ScoreMap, f64)> {
        let grid = self.encoder.config().grid;
        let f = &tile.features;
        match &self.memory {
            None => {
                let maps = zero_shot_maps(f, grid, &self.prototypes, &self.config.scales, self.config.aggregation)?;
                Ok((upsample_map(&maps.combined, (side, side))?, tile.ascore0))
            }
            Some(memory) => {
                let fused = fuse_plus(
                    f,
                    grid,
                    memory,
                    &self.prototypes,
                    &self.config.scales,
                    self.config.aggregation,
                    &self.config.fusion,
                    tile.ascore0,
                    (side, side),
                )?;
                Ok((fused.segmentation, fused.classification))
            }
        }
    }

    /// Scores pre-extracted features with the current prototypes and memory.
    pub fn score_features(&self, query: &QueryFeatures) -> Result<Prediction> {
        let plan = &query.plan;
        let mut maps = Vec::with_capacity(plan.len());
        let mut scores = Vec::with_capacity(plan.len());
        for tile in &query.tiles {
            let (m, s) = self.score_tile(tile, plan.side)?;
            maps.push(m);
            scores.push(s);
        }
        let (map, score) = merge_tile_predictions(&maps, &scores, plan)?;
        Ok(Prediction {
            score: score.clamp(0.0, 1.0),
            map,
            tiles: plan.len(),
        })
    }

    /// Scores an image tensor whose shorter side equals the encoder resolution.
    pub fn score_tensor(&self, img: &ImageTensor) -> Result<Prediction> {
        self.score_features(&self.extract(img)?)
    }

    pub fn score(&self, img: &Preprocessed) -> Result<Prediction> {
        self.score_tensor(&img.tensor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::prompt::{StateLexicon, TemplateSet};

    fn small() -> Encoder {
        let cfg = EncoderConfig {
            input_resolution: 32,
            patch_size: 8,
            grid: (4, 4),
            d_image: 16,
            d_text: 16,
            embed_dim: 16,
        };
        Encoder::reference(3, cfg).unwrap()
    }

    fn library() -> PromptLibrary {
        PromptLibrary {
            lexicon: StateLexicon::new(vec!["[o]".into()], vec!["broken [o]".into()]).unwrap(),
            templates: TemplateSet::new(vec!["a [c]".into()]).unwrap(),
        }
    }

    fn config() -> PipelineConfig {
        PipelineConfig {
            preprocess: PreprocessSpec::with_target(32),
            ..PipelineConfig::default()
        }
    }

    fn img(h: usize, w: usize, seed: u32) -> ImageTensor {
        ImageTensor::from_fn(h, w, |c, y, x| {
            ((((y * 7 + x * 3 + c) as u32).wrapping_mul(2654435761) ^ seed) % 97) as f32 / 50.0 - 1.0
        })
    }

    #[test]
    fn zero_shot_square_and_wide() {
        let enc = small();
        let wc = Detector::from_prompts(&enc, "widget", &library(), config()).unwrap();
        let p = wc.score_tensor(&img(32, 32, 1)).unwrap();
        assert_eq!((p.map.dims(), p.tiles), ((32, 32), 1));
        assert!((0.0..=1.0).contains(&p.score));
        let wide = wc.score_tensor(&img(32, 48, 1)).unwrap();
        assert_eq!((wide.map.dims(), wide.tiles), ((32, 48), 2));
        assert!(wc.score_tensor(&img(30, 48, 1)).is_err());
        assert_eq!(p.map_at((10, 20)).unwrap().dims(), (10, 20));
    }

    #[test]
    fn few_shot_memory_from_tiles() {
        let enc = small();
        let wc = Detector::from_prompts(&enc, "widget", &library(), config()).unwrap();
        let mem = wc.build_memory(&[img(32, 48, 5)], vec!["r".into()], Some(0)).unwrap();
        // two tiles of 16 patches each
        assert_eq!(mem.patch.len(), 32);
        assert_eq!(mem.window(2).unwrap().len(), 18);
        let wc = wc.with_memory(mem).unwrap();
        let same = wc.score_tensor(&img(32, 48, 5)).unwrap();
        let other = wc.score_tensor(&img(32, 48, 9)).unwrap();
        assert!(same.map.max() <= other.map.max());
    }

    #[test]
    fn config_must_match_encoder() {
        let enc = small();
        assert!(Detector::from_prompts(&enc, "widget", &library(), PipelineConfig::default()).is_err());
        let foreign = Encoder::reference(4, *enc.config()).unwrap();
        let wc = Detector::from_prompts(&foreign, "widget", &library(), config()).unwrap();
        let mem = wc.build_memory(&[img(32, 32, 5)], vec![], None).unwrap();
        let mine = Detector::from_prompts(&enc, "widget", &library(), config()).unwrap();
        assert_eq!(mine.with_memory(mem).unwrap_err().kind(), "config");
    }
}
