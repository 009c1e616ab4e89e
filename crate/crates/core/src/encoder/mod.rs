//! Vision-language encoders.
//!
//! [`Encoder`] wraps a [`Backbone`] and provides everything the scoring code
//! needs: prompt embeddings, the global image embedding, per-patch features and
//! masked window embeddings. Window embeddings are computed by forwarding the
//! class token together with only the patch tokens inside the window (their
//! positional encodings kept), so a window's embedding depends on nothing but
//! the pixels it covers.
//!
//! Two backbones ship with the crate: [`ReferenceBackbone`], a small seeded
//! transformer used in tests and benchmarks, and [`OnnxBackbone`], which runs an
//! exported model from an interchange directory.

mod onnx;
mod reference;
mod tokenizer;

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::linalg::normalize;
use crate::prompt::TextEncoder;
pub use crate::tensor::ImageTensor;

pub use onnx::{Graph, OnnxBackbone, Tensor as OnnxTensor};
pub use reference::{ReferenceBackbone, ReferenceSize};
pub use tokenizer::{ClipBpe, Tokenizer, TokenizerSpec};

/// Geometry and dimensions of an encoder.
///
/// `d_image` and `d_text` are the widths of the two towers; both project into
/// the shared `embed_dim` space where all cosine similarities are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_resolution: usize,
    pub patch_size: usize,
    pub grid: (usize, usize),
    pub d_image: usize,
    pub d_text: usize,
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    /// The ViT-B/16+ profile: 240 px input, 16 px patches, 15×15 tokens.
    fn default() -> Self {
        Self {
            input_resolution: 240,
            patch_size: 16,
            grid: (15, 15),
            d_image: 896,
            d_text: 640,
            embed_dim: 640,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let (gh, gw) = self.grid;
        let all_positive = [
            self.input_resolution,
            self.patch_size,
            gh,
            gw,
            self.d_image,
            self.d_text,
            self.embed_dim,
        ]
        .iter()
        .all(|&v| v > 0);
        if !all_positive {
            return Err(Error::Config(format!(
                "all encoder dimensions must be positive: {self:?}"
            )));
        }
        if self.patch_size * gh != self.input_resolution || self.patch_size * gw != self.input_resolution {
            return Err(Error::Config(format!(
                "input resolution {} is not patch size {} times grid {:?}",
                self.input_resolution, self.patch_size, self.grid
            )));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }
}

/// Which features a [`PatchFeatureMap`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureOrigin {
    /// Last-layer patch tokens.
    Penultimate,
    /// Window embeddings for a k×k kernel.
    Window(usize),
}

impl std::fmt::Display for FeatureOrigin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureOrigin::Penultimate => write!(f, "penultimate"),
            FeatureOrigin::Window(k) => write!(f, "window:{k}"),
        }
    }
}

/// A grid of unit vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatureMap {
    rows: usize,
    cols: usize,
    dim: usize,
    data: Vec<f32>,
    origin: FeatureOrigin,
}

impl PatchFeatureMap {
    pub fn new(rows: usize, cols: usize, dim: usize, data: Vec<f32>, origin: FeatureOrigin) -> Result<Self> {
        contract!(rows > 0 && cols > 0 && dim > 0, "feature map must be non-empty");
        contract!(
            data.len() == rows * cols * dim,
            "feature map {rows}x{cols}x{dim} needs {} values, got {}",
            rows * cols * dim,
            data.len()
        );
        Ok(Self {
            rows,
            cols,
            dim,
            data,
            origin,
        })
    }

    /// Builds a map from un-normalized vectors, normalizing each.
    pub fn from_vectors(rows: usize, cols: usize, vectors: Vec<Vec<f32>>, origin: FeatureOrigin) -> Result<Self> {
        contract!(
            vectors.len() == rows * cols,
            "expected {} vectors, got {}",
            rows * cols,
            vectors.len()
        );
        let dim = vectors.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows * cols * dim);
        for mut v in vectors {
            contract!(v.len() == dim, "feature vectors disagree in dimension");
            normalize(&mut v)?;
            data.extend(v);
        }
        Self::new(rows, cols, dim, data, origin)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn origin(&self) -> FeatureOrigin {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, row: usize, col: usize) -> &[f32] {
        self.vector(row * self.cols + col)
    }

    pub fn vector(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn vectors(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// A set of patches that take part in a windowed forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowMask {
    /// Top-left patch of a square window.
    pub anchor: (usize, usize),
    /// Side of the square window in patches; 0 for irregular masks.
    pub kernel: usize,
    grid: (usize, usize),
    indices: Vec<usize>,
}

impl WindowMask {
    /// The `kernel`×`kernel` window whose top-left patch is `anchor`.
    pub fn square(grid: (usize, usize), anchor: (usize, usize), kernel: usize) -> Result<Self> {
        let (gh, gw) = grid;
        let (r, c) = anchor;
        contract!(kernel >= 1, "window kernel must be at least 1");
        contract!(
            r + kernel <= gh && c + kernel <= gw,
            "window at {anchor:?} with kernel {kernel} leaves grid {grid:?}"
        );
        let indices = (r..r + kernel)
            .flat_map(|y| (c..c + kernel).map(move |x| y * gw + x))
            .collect();
        Ok(Self {
            anchor,
            kernel,
            grid,
            indices,
        })
    }

    /// The mask selecting every patch.
    pub fn full(grid: (usize, usize)) -> Self {
        let indices = (0..grid.0 * grid.1).collect();
        let kernel = if grid.0 == grid.1 { grid.0 } else { 0 };
        Self {
            anchor: (0, 0),
            kernel,
            grid,
            indices,
        }
    }

    /// An arbitrary set of patch indices (row-major); may be empty, which the
    /// encoder rejects.
    pub fn from_indices(grid: (usize, usize), mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        contract!(
            indices.iter().all(|&i| i < grid.0 * grid.1),
            "mask index outside grid {grid:?}"
        );
        let anchor = indices.first().map_or((0, 0), |&i| (i / grid.1, i % grid.1));
        Ok(Self {
            anchor,
            kernel: 0,
            grid,
            indices,
        })
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn covers(&self, row: usize, col: usize) -> bool {
        self.indices.binary_search(&(row * self.grid.1 + col)).is_ok()
    }
}

/// Projected (not yet normalized) outputs of one vision forward.
#[derive(Debug, Clone)]
pub struct VisionOutput {
    pub class_embedding: Vec<f32>,
    /// Projected tokens of the kept patches, in keep order.
    pub patch_tokens: Option<Vec<Vec<f32>>>,
}

/// A vision-language model that can forward arbitrary subsets of patch tokens.
pub trait Backbone: Send + Sync {
    fn config(&self) -> &EncoderConfig;

    /// Stable identifier of the weights and geometry.
    fn fingerprint(&self) -> String;

    fn embed_text(&self, prompt: &str) -> Result<Vec<f32>>;

    /// Runs the vision tower once per keep set. `patches` is the patchified
    /// image (`num_patches × patch_dim`); each keep set lists the participating
    /// patch indices. All keep sets in one call have the same length.
    fn forward_vision(&self, patches: &[f32], keep: &[Vec<usize>], with_tokens: bool) -> Result<Vec<VisionOutput>>;
}

/// Maximum number of windows forwarded in one backbone call.
const MAX_BATCH: usize = 256;

/// Contract-checking front end over a [`Backbone`].
pub struct Encoder {
    backbone: Box<dyn Backbone>,
    token_work: AtomicU64,
}

impl std::fmt::Debug for Encoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Encoder")
            .field("fingerprint", &self.fingerprint())
            .field("token_work", &self.token_work())
            .finish()
    }
}

impl Encoder {
    pub fn new(backbone: impl Backbone + 'static) -> Result<Self> {
        backbone.config().validate()?;
        Ok(Self {
            backbone: Box::new(backbone),
            token_work: AtomicU64::new(0),
        })
    }

    /// The seeded built-in transformer, with the default size.
    pub fn reference(seed: u64, config: EncoderConfig) -> Result<Self> {
        Self::new(ReferenceBackbone::new(seed, config, ReferenceSize::default())?)
    }

    /// Loads an interchange directory (`config.json`, `text.onnx`, `image.onnx`).
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        Self::new(OnnxBackbone::load(dir)?)
    }

    /// `reference:<seed>` selects the built-in encoder at the default profile;
    /// anything else is treated as an interchange directory.
    pub fn from_spec(spec: &str) -> Result<Self> {
        match spec.strip_prefix("reference:") {
            Some(seed) => {
                let seed = seed
                    .parse()
                    .map_err(|_| Error::Config(format!("bad reference seed in {spec:?}")))?;
                Self::reference(seed, EncoderConfig::default())
            }
            None => Self::load(spec),
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        self.backbone.config()
    }

    pub fn fingerprint(&self) -> String {
        self.backbone.fingerprint()
    }

    /// Total tokens (class token included) pushed through the vision tower.
    pub fn token_work(&self) -> u64 {
        self.token_work.load(Ordering::Relaxed)
    }

    pub fn reset_token_work(&self) {
        self.token_work.store(0, Ordering::Relaxed);
    }

    fn patches(&self, img: &ImageTensor) -> Result<Vec<f32>> {
        let r = self.config().input_resolution;
        if img.dims() != (r, r) {
            return Err(Error::Config(format!(
                "image is {}x{} but the encoder expects {r}x{r}",
                img.height(),
                img.width()
            )));
        }
        img.patchify(self.config().patch_size)
    }

    fn forward(&self, patches: &[f32], keep: &[Vec<usize>], with_tokens: bool) -> Result<Vec<VisionOutput>> {
        let tokens: usize = keep.iter().map(|k| k.len() + 1).sum();
        self.token_work.fetch_add(tokens as u64, Ordering::Relaxed);
        let out = self.backbone.forward_vision(patches, keep, with_tokens)?;
        contract!(
            out.len() == keep.len(),
            "backbone returned {} outputs for {} inputs",
            out.len(),
            keep.len()
        );
        Ok(out)
    }

    pub fn encode_text(&self, prompt: &str) -> Result<Vec<f32>> {
        let mut e = self.backbone.embed_text(prompt)?;
        contract!(
            e.len() == self.config().embed_dim,
            "text embedding has dimension {} instead of {}",
            e.len(),
            self.config().embed_dim
        );
        normalize(&mut e)?;
        Ok(e)
    }

    /// Global embedding and last-layer patch features from a single forward.
    pub fn encode_global_and_patches(&self, img: &ImageTensor) -> Result<(Vec<f32>, PatchFeatureMap)> {
        let patches = self.patches(img)?;
        let all: Vec<usize> = (0..self.config().num_patches()).collect();
        let out = self.forward(&patches, &[all], true)?.pop().expect("one output");
        let tokens = out
            .patch_tokens
            .ok_or_else(|| Error::Contract("backbone returned no patch tokens".into()))?;
        let (gh, gw) = self.config().grid;
        let map = PatchFeatureMap::from_vectors(gh, gw, tokens, FeatureOrigin::Penultimate)?;
        let mut global = out.class_embedding;
        normalize(&mut global)?;
        Ok((global, map))
    }

    pub fn encode_image_global(&self, img: &ImageTensor) -> Result<Vec<f32>> {
        let patches = self.patches(img)?;
        let all: Vec<usize> = (0..self.config().num_patches()).collect();
        let mut e = self
            .forward(&patches, &[all], false)?
            .pop()
            .expect("one output")
            .class_embedding;
        normalize(&mut e)?;
        Ok(e)
    }

    pub fn encode_patches(&self, img: &ImageTensor) -> Result<PatchFeatureMap> {
        self.encode_global_and_patches(img).map(|(_, map)| map)
    }

    fn check_mask(&self, mask: &WindowMask) -> Result<()> {
        contract!(!mask.is_empty(), "window mask selects no patches");
        contract!(
            mask.grid() == self.config().grid,
            "mask grid {:?} does not match encoder grid {:?}",
            mask.grid(),
            self.config().grid
        );
        Ok(())
    }

    /// Embedding of the image restricted to the patches selected by `mask`.
    pub fn encode_window(&self, img: &ImageTensor, mask: &WindowMask) -> Result<Vec<f32>> {
        self.check_mask(mask)?;
        let patches = self.patches(img)?;
        let mut e = self
            .forward(&patches, &[mask.indices().to_vec()], false)?
            .pop()
            .expect("one output")
            .class_embedding;
        normalize(&mut e)?;
        Ok(e)
    }

    fn window_map_dims(&self, masks: &[WindowMask], kernel: usize) -> (usize, usize) {
        let (gh, gw) = self.config().grid;
        if kernel == 0 || kernel > gh || kernel > gw {
            return (1, masks.len());
        }
        let (rows, cols) = (gh - kernel + 1, gw - kernel + 1);
        let complete =
            masks.len() == rows * cols && masks.iter().enumerate().all(|(i, m)| m.anchor == (i / cols, i % cols));
        if complete {
            (rows, cols)
        } else {
            (1, masks.len())
        }
    }

    /// Window embeddings for many same-kernel masks, forwarded in batches of
    /// `k²+1` tokens each. A full sliding plan in row-major order yields a
    /// `(G_h−k+1)×(G_w−k+1)` map; any other mask list yields a `1×n` map.
    pub fn encode_windows_batched(&self, img: &ImageTensor, masks: &[WindowMask]) -> Result<PatchFeatureMap> {
        contract!(!masks.is_empty(), "no window masks given");
        let kernel = masks[0].kernel;
        for m in masks {
            self.check_mask(m)?;
            contract!(
                m.kernel == kernel && m.len() == masks[0].len(),
                "all masks in a batch must share one kernel"
            );
        }
        let patches = self.patches(img)?;
        let mut vectors = Vec::with_capacity(masks.len());
        for chunk in masks.chunks(MAX_BATCH) {
            let keep: Vec<Vec<usize>> = chunk.iter().map(|m| m.indices().to_vec()).collect();
            vectors.extend(
                self.forward(&patches, &keep, false)?
                    .into_iter()
                    .map(|o| o.class_embedding),
            );
        }
        let (rows, cols) = self.window_map_dims(masks, kernel);
        let origin = FeatureOrigin::Window(kernel);
        PatchFeatureMap::from_vectors(rows, cols, vectors, origin)
    }

    /// Baseline for comparison: crops each window's pixels, resizes the crop
    /// to the input resolution and runs a full forward on it.
    pub fn encode_windows_by_tiling(&self, img: &ImageTensor, masks: &[WindowMask]) -> Result<PatchFeatureMap> {
        contract!(!masks.is_empty(), "no window masks given");
        let cfg = *self.config();
        let kernel = masks[0].kernel;
        let all: Vec<usize> = (0..cfg.num_patches()).collect();
        let mut vectors = Vec::with_capacity(masks.len());
        for m in masks {
            self.check_mask(m)?;
            contract!(
                m.kernel == kernel && kernel > 0,
                "tiling needs square masks of one kernel"
            );
            let side = kernel * cfg.patch_size;
            let tile = img
                .crop(m.anchor.0 * cfg.patch_size, m.anchor.1 * cfg.patch_size, side, side)?
                .resize(cfg.input_resolution, cfg.input_resolution)?;
            let patches = tile.patchify(cfg.patch_size)?;
            let out = self.forward(&patches, std::slice::from_ref(&all), false)?;
            vectors.push(out.into_iter().next().expect("one output").class_embedding);
        }
        let (rows, cols) = self.window_map_dims(masks, kernel);
        PatchFeatureMap::from_vectors(rows, cols, vectors, FeatureOrigin::Window(kernel))
    }
}

impl TextEncoder for Encoder {
    fn encode_text(&self, prompt: &str) -> Result<Vec<f32>> {
        Encoder::encode_text(self, prompt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_profile() {
        let c = EncoderConfig::default();
        c.validate().unwrap();
        assert_eq!(c.num_patches(), 225);
        let bad = EncoderConfig { grid: (14, 15), ..c };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn square_mask_indices() {
        let m = WindowMask::square((4, 5), (1, 2), 2).unwrap();
        assert_eq!(m.indices(), &[7, 8, 12, 13]);
        assert!(m.covers(2, 3) && !m.covers(0, 0));
        assert!(WindowMask::square((4, 5), (3, 0), 2).is_err());
        assert!(WindowMask::square((4, 5), (0, 0), 0).is_err());
        assert_eq!(WindowMask::full((3, 3)).len(), 9);
    }
}
