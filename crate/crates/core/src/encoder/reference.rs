//! A small seeded CLIP-shaped transformer.
//!
//! The weights are pseudo-random, so its embeddings carry no semantics, but it
//! has the same structure as a ViT CLIP model (class token, learned positional
//! embeddings, pre-norm attention blocks, output projections) and therefore
//! exercises every contract of the encoder interface: window locality,
//! dropped-token forwarding and token accounting.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::tokenizer::Tokenizer;
use super::{Backbone, EncoderConfig, VisionOutput};
use crate::error::{contract, Result};

/// Internal widths of the reference transformer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReferenceSize {
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub context_length: usize,
}

impl Default for ReferenceSize {
    fn default() -> Self {
        Self {
            width: 64,
            heads: 4,
            layers: 2,
            context_length: 64,
        }
    }
}

const VOCAB: usize = 258;

struct Linear {
    weight: Array2<f32>,
    bias: Array1<f32>,
}

impl Linear {
    fn new(rng: &mut ChaCha8Rng, inputs: usize, outputs: usize) -> Self {
        Self {
            weight: gaussian(rng, (inputs, outputs), 1.0 / (inputs as f32).sqrt()),
            bias: gaussian(rng, (1, outputs), 0.02).remove_axis(Axis(0)),
        }
    }

    fn apply(&self, x: &ArrayView2<f32>) -> Array2<f32> {
        x.dot(&self.weight) + &self.bias
    }
}

struct LayerNorm {
    gamma: Array1<f32>,
    beta: Array1<f32>,
}

impl LayerNorm {
    fn new(rng: &mut ChaCha8Rng, width: usize) -> Self {
        Self {
            gamma: gaussian(rng, (1, width), 0.1).remove_axis(Axis(0)) + 1.0,
            beta: gaussian(rng, (1, width), 0.1).remove_axis(Axis(0)),
        }
    }

    fn apply(&self, x: &ArrayView2<f32>) -> Array2<f32> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            let n = row.len() as f32;
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
            let inv = 1.0 / (var + 1e-5).sqrt();
            for ((v, g), b) in row.iter_mut().zip(&self.gamma).zip(&self.beta) {
                *v = (*v - mean) * inv * g + b;
            }
        }
        out
    }
}

/// Which keys each query may attend to.
#[derive(Clone, Copy)]
enum Attend<'a> {
    All,
    Causal,
    /// Only keys whose flag is set.
    Only(&'a [bool]),
}

impl Attend<'_> {
    fn allows(&self, query: usize, key: usize) -> bool {
        match self {
            Attend::All => true,
            Attend::Causal => key <= query,
            Attend::Only(flags) => flags[key],
        }
    }
}

struct Block {
    ln_1: LayerNorm,
    qkv: Linear,
    out: Linear,
    ln_2: LayerNorm,
    fc: Linear,
    proj: Linear,
    heads: usize,
}

impl Block {
    fn new(rng: &mut ChaCha8Rng, width: usize, heads: usize) -> Self {
        Self {
            ln_1: LayerNorm::new(rng, width),
            qkv: Linear::new(rng, width, 3 * width),
            out: Linear::new(rng, width, width),
            ln_2: LayerNorm::new(rng, width),
            fc: Linear::new(rng, width, 4 * width),
            proj: Linear::new(rng, 4 * width, width),
            heads,
        }
    }

    fn attention(&self, x: &ArrayView2<f32>, attend: Attend) -> Array2<f32> {
        let (n, width) = x.dim();
        let hd = width / self.heads;
        let qkv = self.qkv.apply(x);
        let scale = 1.0 / (hd as f32).sqrt();
        let mut merged = Array2::<f32>::zeros((n, width));
        for h in 0..self.heads {
            let q = qkv.slice(s![.., h * hd..(h + 1) * hd]);
            let k = qkv.slice(s![.., width + h * hd..width + (h + 1) * hd]);
            let v = qkv.slice(s![.., 2 * width + h * hd..2 * width + (h + 1) * hd]);
            let mut logits = q.dot(&k.t()) * scale;
            for (qi, mut row) in logits.rows_mut().into_iter().enumerate() {
                let max = row
                    .indexed_iter()
                    .filter(|(ki, _)| attend.allows(qi, *ki))
                    .map(|(_, &v)| v)
                    .fold(f32::NEG_INFINITY, f32::max);
                let mut total = 0.0;
                for (ki, v) in row.indexed_iter_mut() {
                    *v = if attend.allows(qi, ki) { (*v - max).exp() } else { 0.0 };
                    total += *v;
                }
                row.mapv_inplace(|v| v / total);
            }
            merged.slice_mut(s![.., h * hd..(h + 1) * hd]).assign(&logits.dot(&v));
        }
        self.out.apply(&merged.view())
    }

    fn forward(&self, x: Array2<f32>, attend: Attend) -> Array2<f32> {
        let x = &x + &self.attention(&self.ln_1.apply(&x.view()).view(), attend);
        let mut h = self.fc.apply(&self.ln_2.apply(&x.view()).view());
        h.mapv_inplace(|v| v * sigmoid(1.702 * v));
        x + self.proj.apply(&h.view())
    }
}

fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

fn gaussian(rng: &mut ChaCha8Rng, shape: (usize, usize), std: f32) -> Array2<f32> {
    let dist = Normal::new(0.0f32, std).expect("positive std");
    Array2::from_shape_simple_fn(shape, || dist.sample(rng))
}

/// The seeded reference transformer. See the module docs.
pub struct ReferenceBackbone {
    config: EncoderConfig,
    size: ReferenceSize,
    seed: u64,
    tokenizer: Tokenizer,
    patch_embed: Array2<f32>,
    class_embedding: Array1<f32>,
    vision_pos: Array2<f32>,
    ln_pre: LayerNorm,
    vision_blocks: Vec<Block>,
    ln_post: LayerNorm,
    vision_proj: Array2<f32>,
    token_embedding: Array2<f32>,
    text_pos: Array2<f32>,
    text_blocks: Vec<Block>,
    ln_final: LayerNorm,
    text_proj: Array2<f32>,
}

impl ReferenceBackbone {
    pub fn new(seed: u64, config: EncoderConfig, size: ReferenceSize) -> Result<Self> {
        config.validate()?;
        contract!(
            size.heads > 0 && size.width.is_multiple_of(size.heads) && size.layers > 0,
            "reference width {} must split evenly over {} heads",
            size.width,
            size.heads
        );
        contract!(size.context_length >= 2, "context must hold the start and end tokens");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = size.width;
        let patch_dim = config.patch_dim();
        let patch_embed = gaussian(&mut rng, (patch_dim, w), 1.0 / (patch_dim as f32).sqrt());
        let class_embedding = gaussian(&mut rng, (1, w), 0.5).remove_axis(Axis(0));
        let vision_pos = gaussian(&mut rng, (config.num_patches() + 1, w), 0.5);
        let ln_pre = LayerNorm::new(&mut rng, w);
        let vision_blocks = (0..size.layers).map(|_| Block::new(&mut rng, w, size.heads)).collect();
        let ln_post = LayerNorm::new(&mut rng, w);
        let vision_proj = gaussian(&mut rng, (w, config.embed_dim), 1.0 / (w as f32).sqrt());
        let token_embedding = gaussian(&mut rng, (VOCAB, w), 1.0);
        let text_pos = gaussian(&mut rng, (size.context_length, w), 0.5);
        let text_blocks = (0..size.layers).map(|_| Block::new(&mut rng, w, size.heads)).collect();
        let ln_final = LayerNorm::new(&mut rng, w);
        let text_proj = gaussian(&mut rng, (w, config.embed_dim), 1.0 / (w as f32).sqrt());
        Ok(Self {
            config,
            size,
            seed,
            tokenizer: Tokenizer::byte(size.context_length),
            patch_embed,
            class_embedding,
            vision_pos,
            ln_pre,
            vision_blocks,
            ln_post,
            vision_proj,
            token_embedding,
            text_pos,
            text_blocks,
            ln_final,
            text_proj,
        })
    }

    /// Class token + the given patches, each with its own positional embedding.
    fn vision_tokens(&self, patches: &[f32], keep: &[usize]) -> Array2<f32> {
        let pd = self.config.patch_dim();
        let mut pixels = Array2::<f32>::zeros((keep.len(), pd));
        for (row, &p) in keep.iter().enumerate() {
            pixels
                .row_mut(row)
                .assign(&ndarray::ArrayView1::from(&patches[p * pd..(p + 1) * pd]));
        }
        let embedded = pixels.dot(&self.patch_embed);
        let mut x = Array2::<f32>::zeros((keep.len() + 1, self.size.width));
        x.row_mut(0).assign(&(&self.class_embedding + &self.vision_pos.row(0)));
        for (row, &p) in keep.iter().enumerate() {
            x.row_mut(row + 1)
                .assign(&(&embedded.row(row) + &self.vision_pos.row(p + 1)));
        }
        x
    }

    fn vision_tower(&self, x: Array2<f32>, attend: Attend) -> Array2<f32> {
        let mut x = self.ln_pre.apply(&x.view());
        for block in &self.vision_blocks {
            x = block.forward(x, attend);
        }
        self.ln_post.apply(&x.view()).dot(&self.vision_proj)
    }

    /// Forward over only the kept patch tokens (the production path).
    fn forward_dropped(&self, patches: &[f32], keep: &[usize], with_tokens: bool) -> VisionOutput {
        let out = self.vision_tower(self.vision_tokens(patches, keep), Attend::All);
        VisionOutput {
            class_embedding: out.row(0).to_vec(),
            patch_tokens: with_tokens.then(|| out.rows().into_iter().skip(1).map(|r| r.to_vec()).collect()),
        }
    }

    /// Class embedding from the full token sequence with attention limited to
    /// the class token and `allowed` patches. Independent of the dropped-token
    /// path; used to check that the two agree.
    pub fn forward_masked_attention(&self, patches: &[f32], allowed: &[usize]) -> Result<Vec<f32>> {
        let n = self.config.num_patches();
        contract!(
            patches.len() == n * self.config.patch_dim(),
            "patch buffer has the wrong size"
        );
        contract!(allowed.iter().all(|&p| p < n), "allowed patch outside grid");
        let mut flags = vec![false; n + 1];
        flags[0] = true;
        for &p in allowed {
            flags[p + 1] = true;
        }
        let all: Vec<usize> = (0..n).collect();
        let out = self.vision_tower(self.vision_tokens(patches, &all), Attend::Only(&flags));
        Ok(out.row(0).to_vec())
    }

    pub fn size(&self) -> ReferenceSize {
        self.size
    }
}

impl Backbone for ReferenceBackbone {
    fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}{:?}{}", self.config, self.size, self.seed));
        format!("reference:{}:{}", self.seed, &hex::encode(h.finalize())[..16])
    }

    fn embed_text(&self, prompt: &str) -> Result<Vec<f32>> {
        let ids = self.tokenizer.encode(prompt)?;
        let mut x = Array2::<f32>::zeros((ids.len(), self.size.width));
        for (i, &id) in ids.iter().enumerate() {
            x.row_mut(i)
                .assign(&(&self.token_embedding.row(id as usize) + &self.text_pos.row(i)));
        }
        for block in &self.text_blocks {
            x = block.forward(x, Attend::Causal);
        }
        let x = self.ln_final.apply(&x.view());
        let eot = x.row(ids.len() - 1);
        Ok(eot.dot(&self.text_proj).to_vec())
    }

    fn forward_vision(&self, patches: &[f32], keep: &[Vec<usize>], with_tokens: bool) -> Result<Vec<VisionOutput>> {
        let n = self.config.num_patches();
        contract!(
            patches.len() == n * self.config.patch_dim(),
            "patch buffer has the wrong size"
        );
        for k in keep {
            contract!(!k.is_empty(), "empty keep set");
            contract!(k.iter().all(|&p| p < n), "keep index outside grid");
        }
        use rayon::prelude::*;
        Ok(keep
            .par_iter()
            .map(|k| self.forward_dropped(patches, k, with_tokens))
            .collect())
    }
}
