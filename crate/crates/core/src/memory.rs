//! Few-shot reference memories.
//!
//! A [`ReferenceMemory`] stores every last-layer patch feature and every window
//! feature of K normal reference images. A query feature's anomaly score is
//! its distance to the closest stored feature, `½(1 − max cos)`. The patch
//! and window maps are averaged, then fused with the zero-shot map for
//! segmentation and with the zero-shot image score for classification.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{read_container, write_container, NamedTensor};
use crate::encoder::{Encoder, FeatureOrigin, ImageTensor, PatchFeatureMap};
use crate::error::{contract, Error, Result};
use crate::linalg::{check_unit, dot};
use crate::prompt::ClassPrototypes;
use crate::windows::{
    mean_maps, resize_map, upsample_map, zero_shot_maps, Aggregation, ImageFeatures, Resolution, ScaleSet, ScoreMap,
    ZeroShotMaps,
};

const UNIT_TOL: f64 = 1e-5;

/// Unit vectors harvested from the references at one feature scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Bank {
    origin: FeatureOrigin,
    dim: usize,
    data: Vec<f32>,
}

impl Bank {
    pub fn new(origin: FeatureOrigin, dim: usize, data: Vec<f32>) -> Result<Self> {
        contract!(dim > 0 && !data.is_empty(), "memory bank must be non-empty");
        contract!(
            data.len().is_multiple_of(dim),
            "bank data is not a whole number of {dim}-vectors"
        );
        let bank = Self { origin, dim, data };
        for v in bank.vectors() {
            check_unit(v, UNIT_TOL, "memory vector")?;
        }
        Ok(bank)
    }

    fn from_maps<'a>(origin: FeatureOrigin, maps: impl IntoIterator<Item = &'a PatchFeatureMap>) -> Result<Self> {
        let mut dim = 0;
        let mut data = Vec::new();
        for m in maps {
            contract!(
                m.origin() == origin,
                "feature map {} cannot join the {origin} bank",
                m.origin()
            );
            contract!(dim == 0 || m.dim() == dim, "reference features disagree in dimension");
            dim = m.dim();
            data.extend_from_slice(m.as_slice());
        }
        Self::new(origin, dim, data)
    }

    pub fn origin(&self) -> FeatureOrigin {
        self.origin
    }

    pub fn name(&self) -> String {
        self.origin.to_string()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// Where a memory came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub k: usize,
    pub reference_ids: Vec<String>,
    pub seed: Option<u64>,
    pub encoder_fingerprint: String,
}

/// Patch bank plus one bank per window kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceMemory {
    pub patch: Bank,
    /// Ordered as the kernels of the scale set used to build the memory.
    pub windows: Vec<(usize, Bank)>,
    pub provenance: Provenance,
}

impl ReferenceMemory {
    pub fn window(&self, kernel: usize) -> Option<&Bank> {
        self.windows.iter().find(|(k, _)| *k == kernel).map(|(_, b)| b)
    }

    pub fn kernels(&self) -> Vec<usize> {
        self.windows.iter().map(|(k, _)| *k).collect()
    }

    pub fn banks(&self) -> impl Iterator<Item = &Bank> {
        std::iter::once(&self.patch).chain(self.windows.iter().map(|(_, b)| b))
    }

    /// Writes `banks.wctf` and `memory.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tensors: Vec<(String, NamedTensor)> = self
            .banks()
            .map(|b| {
                Ok((
                    b.name(),
                    NamedTensor::new(vec![b.len(), b.dim()], b.as_slice().to_vec())?,
                ))
            })
            .collect::<Result<_>>()?;
        write_container(dir.join("banks.wctf"), tensors.iter().map(|(n, t)| (n.as_str(), t)))?;
        let manifest = MemoryManifest {
            banks: tensors.iter().map(|(n, _)| n.clone()).collect(),
            kernels: self.kernels(),
            provenance: self.provenance.clone(),
        };
        let path = dir.join("memory.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("memory.json");
        let text = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: MemoryManifest = serde_json::from_slice(&text)?;
        let mut tensors = read_container(dir.join("banks.wctf"))?;
        let mut take = |origin: FeatureOrigin| -> Result<Bank> {
            let name = origin.to_string();
            let t = tensors
                .remove(&name)
                .ok_or_else(|| Error::Manifest(format!("memory has no bank {name:?}")))?;
            contract!(t.shape.len() == 2, "bank {name:?} must be two-dimensional");
            Bank::new(origin, t.shape[1], t.data)
        };
        let patch = take(FeatureOrigin::Penultimate)?;
        let windows = manifest
            .kernels
            .iter()
            .map(|&k| Ok((k, take(FeatureOrigin::Window(k))?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            patch,
            windows,
            provenance: manifest.provenance,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MemoryManifest {
    banks: Vec<String>,
    kernels: Vec<usize>,
    provenance: Provenance,
}

/// Builds a memory from features already extracted with patch tokens and
/// window maps for every kernel in `scales`.
pub fn memory_from_features(
    features: &[ImageFeatures],
    scales: &ScaleSet,
    provenance: Provenance,
) -> Result<ReferenceMemory> {
    contract!(!features.is_empty(), "at least one reference image is required");
    let patch_maps = features
        .iter()
        .map(|f| {
            f.patches
                .as_ref()
                .ok_or_else(|| Error::Contract("reference features lack patch tokens".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let patch = Bank::from_maps(FeatureOrigin::Penultimate, patch_maps)?;
    let windows = scales
        .kernels
        .iter()
        .map(|&k| {
            let maps = features
                .iter()
                .map(|f| {
                    f.window(k)
                        .ok_or_else(|| Error::Contract(format!("reference lacks window:{k} features")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((k, Bank::from_maps(FeatureOrigin::Window(k), maps)?))
        })
        .collect::<Result<_>>()?;
    Ok(ReferenceMemory {
        patch,
        windows,
        provenance,
    })
}

/// Encodes K normal references (image-major, row-major within an image).
pub fn build_memory(
    refs: &[ImageTensor],
    reference_ids: Vec<String>,
    seed: Option<u64>,
    encoder: &Encoder,
    scales: &ScaleSet,
) -> Result<ReferenceMemory> {
    contract!(!refs.is_empty(), "at least one reference image is required");
    scales.validate(encoder.config().grid)?;
    let features = refs
        .iter()
        .map(|img| ImageFeatures::extract(encoder, img, &scales.kernels, true))
        .collect::<Result<Vec<_>>>()?;
    let provenance = Provenance {
        k: refs.len(),
        reference_ids,
        seed,
        encoder_fingerprint: encoder.fingerprint(),
    };
    memory_from_features(&features, scales, provenance)
}

/// `min over r in bank of ½(1 − ⟨F, r⟩)` at every position of `features`.
pub fn associate(features: &PatchFeatureMap, bank: &Bank) -> Result<ScoreMap> {
    contract!(
        features.dim() == bank.dim(),
        "features have dimension {} but the bank has {}",
        features.dim(),
        bank.dim()
    );
    contract!(!bank.is_empty(), "memory bank is empty");
    let values: Vec<f64> = features
        .as_slice()
        .par_chunks(features.dim())
        .map(|f| {
            let best = bank.vectors().map(|r| dot(f, r)).fold(f64::NEG_INFINITY, f64::max);
            (0.5 * (1.0 - best)).clamp(0.0, 1.0)
        })
        .collect();
    let resolution = match features.origin() {
        FeatureOrigin::Penultimate => Resolution::Patch,
        FeatureOrigin::Window(k) => Resolution::Window(k),
    };
    ScoreMap::new(features.rows(), features.cols(), values, resolution)
}

/// Pixel-wise mean of the per-scale association maps (already on one grid).
pub fn fuse_scales(maps: &[&ScoreMap]) -> Result<ScoreMap> {
    mean_maps(maps)
}

/// Which components enter the few-shot scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Weight of the zero-shot map in the segmentation mix.
    pub language_weight: f64,
    pub use_language: bool,
    pub use_memory: bool,
    pub use_patch_bank: bool,
    /// Window banks to use; `None` uses every bank in the memory.
    pub window_kernels: Option<Vec<usize>>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            language_weight: 0.5,
            use_language: true,
            use_memory: true,
            use_patch_bank: true,
            window_kernels: None,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.language_weight) {
            return Err(Error::Config(format!(
                "language weight {} must lie in [0, 1]",
                self.language_weight
            )));
        }
        if !self.use_language && !self.use_memory {
            return Err(Error::Config("fusion needs the language or the memory path".into()));
        }
        if self.use_memory && !self.use_patch_bank && self.window_kernels.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::Config("memory path enabled with no banks selected".into()));
        }
        Ok(())
    }
}

/// Few-shot segmentation and classification with their ingredients.
#[derive(Debug, Clone)]
pub struct FusedScores {
    /// Final map at image resolution.
    pub segmentation: ScoreMap,
    pub classification: f64,
    /// M^W on the patch grid (memory path only).
    pub memory_map: Option<ScoreMap>,
    /// M^P.
    pub patch_map: Option<ScoreMap>,
    /// Window association maps resized to the patch grid.
    pub window_maps: Vec<(usize, ScoreMap)>,
    /// Zero-shot maps (language path only).
    pub language: Option<ZeroShotMaps>,
    /// ascore₀ used for classification (0 when the language path is off).
    pub ascore0: f64,
}

/// Association maps for the selected banks, averaged on the patch grid.
type MemoryMaps = (ScoreMap, Option<ScoreMap>, Vec<(usize, ScoreMap)>);

fn memory_map(
    features: &ImageFeatures,
    grid: (usize, usize),
    memory: &ReferenceMemory,
    fusion: &FusionConfig,
) -> Result<MemoryMaps> {
    let mut patch_map = None;
    if fusion.use_patch_bank {
        let patches = features
            .patches
            .as_ref()
            .ok_or_else(|| Error::Contract("query features lack patch tokens".into()))?;
        patch_map = Some(associate(patches, &memory.patch)?);
    }
    let kernels = fusion.window_kernels.clone().unwrap_or_else(|| memory.kernels());
    let mut window_maps = Vec::with_capacity(kernels.len());
    for k in kernels {
        let bank = memory
            .window(k)
            .ok_or_else(|| Error::Config(format!("memory has no window:{k} bank")))?;
        let feats = features
            .window(k)
            .ok_or_else(|| Error::Contract(format!("query lacks window:{k} features")))?;
        let raw = associate(feats, bank)?;
        window_maps.push((k, resize_map(&raw, grid.0, grid.1, Resolution::Patch)?));
    }
    let mut parts: Vec<&ScoreMap> = patch_map.iter().collect();
    parts.extend(window_maps.iter().map(|(_, m)| m));
    let fused = fuse_scales(&parts)?;
    Ok((fused, patch_map, window_maps))
}

/// Few-shot scoring of one square query from its pre-extracted features.
///
/// `ascore0` is the zero-shot classification score (which may average
/// several crops); `output` is the pixel size of the segmentation map.
#[allow(clippy::too_many_arguments)]
pub fn fuse_plus(
    features: &ImageFeatures,
    grid: (usize, usize),
    memory: &ReferenceMemory,
    prototypes: &ClassPrototypes,
    scales: &ScaleSet,
    aggregation: Aggregation,
    fusion: &FusionConfig,
    ascore0: f64,
    output: (usize, usize),
) -> Result<FusedScores> {
    fusion.validate()?;
    let (memory_map, patch_map, window_maps) = if fusion.use_memory {
        let (m, p, w) = memory_map(features, grid, memory, fusion)?;
        (Some(m), p, w)
    } else {
        (None, None, Vec::new())
    };
    let language = if fusion.use_language {
        Some(zero_shot_maps(features, grid, prototypes, scales, aggregation)?)
    } else {
        None
    };
    let patch_level = match (&memory_map, &language) {
        (Some(m), Some(l)) => {
            let w = fusion.language_weight;
            let values = m
                .values()
                .iter()
                .zip(l.combined.values())
                .map(|(a, b)| ((1.0 - w) * a + w * b).clamp(0.0, 1.0))
                .collect();
            ScoreMap::new(grid.0, grid.1, values, Resolution::Patch)?
        }
        (Some(m), None) => m.clone(),
        (None, Some(l)) => l.combined.clone(),
        (None, None) => unreachable!("validated fusion config"),
    };
    let segmentation = upsample_map(&patch_level, output)?;
    let ascore0 = if fusion.use_language { ascore0 } else { 0.0 };
    let memory_max = memory_map.as_ref().map_or(0.0, ScoreMap::max);
    let classification = (0.5 * (ascore0 + memory_max)).clamp(0.0, 1.0);
    Ok(FusedScores {
        segmentation,
        classification,
        memory_map,
        patch_map,
        window_maps,
        language,
        ascore0,
    })
}

fn score_query(
    encoder: &Encoder,
    query: &ImageTensor,
    memory: &ReferenceMemory,
    prototypes: &ClassPrototypes,
    scales: &ScaleSet,
    fusion: &FusionConfig,
) -> Result<FusedScores> {
    let mut kernels = scales.kernels.clone();
    for k in fusion.window_kernels.clone().unwrap_or_else(|| memory.kernels()) {
        if !kernels.contains(&k) {
            kernels.push(k);
        }
    }
    let features = ImageFeatures::extract(encoder, query, &kernels, true)?;
    let ascore0 = prototypes.zero_shot_score(&features.global)?;
    fuse_plus(
        &features,
        encoder.config().grid,
        memory,
        prototypes,
        scales,
        Aggregation::Harmonic,
        fusion,
        ascore0,
        query.dims(),
    )
}

/// Few-shot anomaly map at the query's resolution.
pub fn segment_plus(
    encoder: &Encoder,
    query: &ImageTensor,
    memory: &ReferenceMemory,
    prototypes: &ClassPrototypes,
    scales: &ScaleSet,
    fusion: &FusionConfig,
) -> Result<ScoreMap> {
    score_query(encoder, query, memory, prototypes, scales, fusion).map(|s| s.segmentation)
}

/// ascore_W = ½(ascore₀ + max M^W).
pub fn classify_plus(
    encoder: &Encoder,
    query: &ImageTensor,
    memory: &ReferenceMemory,
    prototypes: &ClassPrototypes,
    scales: &ScaleSet,
    fusion: &FusionConfig,
) -> Result<f64> {
    score_query(encoder, query, memory, prototypes, scales, fusion).map(|s| s.classification)
}
