//! A small interpreter for exported ONNX inference graphs, and the backbone
//! that runs an interchange directory on it.
//!
//! Interchange layout:
//!
//! * `config.json`: the [`EncoderConfig`] fields plus `tokenizer`
//!   ([`TokenizerSpec`]), `opset` and `source`.
//! * `text.onnx`: `input_ids` int64 `[B, L]` → `text_embedding` f32 `[B, E]`.
//! * `image.onnx`: `patches` f32 `[P, 3·ps·ps]` and `keep` int64 `[B, N]` →
//!   `image_embedding` f32 `[B, E]` and `patch_tokens` f32 `[B, N, E]`.
//!
//! Patches are row-major over the grid; within a patch values are laid out
//! channel-major, then row, then column, matching a flattened conv kernel.

mod ops;
mod proto;

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backbone, EncoderConfig, Tokenizer, TokenizerSpec, VisionOutput};
use crate::error::{contract, Error, Result};
pub use ops::Tensor;
use proto::{ModelProto, NodeProto};

/// A loaded, topologically ordered inference graph.
#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<NodeProto>,
    initializers: HashMap<String, Arc<Tensor>>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    opset: Option<i64>,
    /// For every value, the index of the last node that reads it.
    last_use: HashMap<String, usize>,
}

impl Graph {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Onnx(msg) => Error::Onnx(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let model = ModelProto::decode(bytes)?;
        let g = model.graph;
        let mut initializers = HashMap::new();
        for t in &g.initializers {
            initializers.insert(t.name.clone(), Arc::new(Tensor::from_proto(t)?));
        }
        let inputs: Vec<String> = g.inputs.into_iter().filter(|n| !initializers.contains_key(n)).collect();

        let mut known: HashSet<&str> = inputs.iter().map(String::as_str).collect();
        known.extend(initializers.keys().map(String::as_str));
        let mut last_use = HashMap::new();
        for (i, node) in g.nodes.iter().enumerate() {
            if !node.domain.is_empty() && node.domain != "ai.onnx" {
                return Err(Error::Onnx(format!(
                    "operator {} from domain {:?} is unsupported",
                    node.op_type, node.domain
                )));
            }
            for name in node.inputs.iter().filter(|n| !n.is_empty()) {
                if !known.contains(name.as_str()) {
                    return Err(Error::Onnx(format!(
                        "node {:?} reads {name:?} before it is produced",
                        node.name
                    )));
                }
                last_use.insert(name.clone(), i);
            }
            known.extend(node.outputs.iter().map(String::as_str));
        }
        for out in &g.outputs {
            if !known.contains(out.as_str()) {
                return Err(Error::Onnx(format!("graph output {out:?} is never produced")));
            }
        }
        Ok(Self {
            nodes: g.nodes,
            initializers,
            inputs,
            outputs: g.outputs,
            opset: model.opset,
            last_use,
        })
    }

    pub fn input_names(&self) -> &[String] {
        &self.inputs
    }

    pub fn output_names(&self) -> &[String] {
        &self.outputs
    }

    pub fn opset(&self) -> Option<i64> {
        self.opset
    }

    pub fn operators(&self) -> Vec<String> {
        let mut ops: Vec<String> = self.nodes.iter().map(|n| n.op_type.clone()).collect();
        ops.sort();
        ops.dedup();
        ops
    }

    /// Runs the graph and returns every declared output.
    pub fn run(&self, inputs: Vec<(&str, Tensor)>) -> Result<HashMap<String, Tensor>> {
        let mut env: HashMap<String, Arc<Tensor>> = HashMap::new();
        for (name, t) in inputs {
            contract!(
                self.inputs.iter().any(|n| n == name),
                "graph has no input named {name:?}"
            );
            env.insert(name.to_string(), Arc::new(t));
        }
        for name in &self.inputs {
            contract!(env.contains_key(name), "graph input {name:?} was not supplied");
        }
        let keep: HashSet<&str> = self.outputs.iter().map(String::as_str).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            let args: Vec<Option<Arc<Tensor>>> = node
                .inputs
                .iter()
                .map(|n| {
                    if n.is_empty() {
                        None
                    } else {
                        env.get(n).or_else(|| self.initializers.get(n)).cloned()
                    }
                })
                .collect();
            let refs: Vec<Option<&Tensor>> = args.iter().map(|a| a.as_deref()).collect();
            let results = ops::run_node(node, &refs)
                .map_err(|e| Error::Onnx(format!("node {:?} ({}): {e}", node.name, node.op_type)))?;
            drop(args);
            for (name, value) in node.outputs.iter().zip(results) {
                if !name.is_empty() {
                    env.insert(name.clone(), Arc::new(value));
                }
            }
            for name in &node.inputs {
                if self.last_use.get(name) == Some(&i) && !keep.contains(name.as_str()) {
                    env.remove(name);
                }
            }
        }
        let mut out = HashMap::new();
        for name in &self.outputs {
            let value = env
                .remove(name)
                .or_else(|| self.initializers.get(name).cloned())
                .ok_or_else(|| Error::Onnx(format!("output {name:?} missing after run")))?;
            out.insert(name.clone(), Arc::try_unwrap(value).unwrap_or_else(|a| (*a).clone()));
        }
        Ok(out)
    }
}

/// `config.json` of an interchange directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterchangeConfig {
    #[serde(flatten)]
    pub encoder: EncoderConfig,
    pub tokenizer: TokenizerSpec,
    #[serde(default)]
    pub opset: Option<i64>,
    #[serde(default)]
    pub source: Option<String>,
}

/// Runs `text.onnx` and `image.onnx` from an interchange directory.
#[derive(Debug)]
pub struct OnnxBackbone {
    config: EncoderConfig,
    tokenizer: Tokenizer,
    text: Graph,
    image: Graph,
    fingerprint: String,
}

fn require_io(graph: &Graph, what: &str, inputs: &[&str], outputs: &[&str]) -> Result<()> {
    for name in inputs {
        if !graph.input_names().iter().any(|n| n == name) {
            return Err(Error::Manifest(format!("{what} has no input {name:?}")));
        }
    }
    for name in outputs {
        if !graph.output_names().iter().any(|n| n == name) {
            return Err(Error::Manifest(format!("{what} has no output {name:?}")));
        }
    }
    Ok(())
}

impl OnnxBackbone {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read(&p).map_err(|e| Error::io(&p, e))
        };
        let config_bytes = read("config.json")?;
        let text_bytes = read("text.onnx")?;
        let image_bytes = read("image.onnx")?;
        let cfg: InterchangeConfig = serde_json::from_slice(&config_bytes)
            .map_err(|e| Error::Manifest(format!("{}: {e}", dir.join("config.json").display())))?;
        cfg.encoder.validate()?;
        let tokenizer = Tokenizer::from_spec(&cfg.tokenizer, dir)?;
        let text = Graph::from_bytes(&text_bytes).map_err(|e| Error::Onnx(format!("text.onnx: {e}")))?;
        let image = Graph::from_bytes(&image_bytes).map_err(|e| Error::Onnx(format!("image.onnx: {e}")))?;
        require_io(&text, "text.onnx", &["input_ids"], &["text_embedding"])?;
        require_io(
            &image,
            "image.onnx",
            &["patches", "keep"],
            &["image_embedding", "patch_tokens"],
        )?;

        let mut hash = Sha256::new();
        for part in [&config_bytes, &text_bytes, &image_bytes] {
            hash.update((part.len() as u64).to_le_bytes());
            hash.update(part);
        }
        let fingerprint = format!("onnx:{}", hex::encode(hash.finalize()));
        Ok(Self {
            config: cfg.encoder,
            tokenizer,
            text,
            image,
            fingerprint,
        })
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn text_graph(&self) -> &Graph {
        &self.text
    }

    pub fn image_graph(&self) -> &Graph {
        &self.image
    }
}

impl Backbone for OnnxBackbone {
    fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn embed_text(&self, prompt: &str) -> Result<Vec<f32>> {
        let ids = self.tokenizer.encode_padded(prompt).map_err(|e| Error::Prompt {
            prompt: prompt.to_string(),
            source: Box::new(e),
        })?;
        let input = Tensor::i64(&[1, ids.len()], ids)?;
        let mut out = self.text.run(vec![("input_ids", input)])?;
        let emb = out.remove("text_embedding").expect("validated output");
        contract!(
            emb.shape() == [1, self.config.embed_dim],
            "text_embedding has shape {:?}, expected [1, {}]",
            emb.shape(),
            self.config.embed_dim
        );
        emb.into_f32_vec()
    }

    fn forward_vision(&self, patches: &[f32], keep: &[Vec<usize>], with_tokens: bool) -> Result<Vec<VisionOutput>> {
        let p = self.config.num_patches();
        let pd = self.config.patch_dim();
        contract!(
            patches.len() == p * pd,
            "expected {} patch values, got {}",
            p * pd,
            patches.len()
        );
        let b = keep.len();
        let n = keep.first().map_or(0, Vec::len);
        contract!(b > 0 && n > 0, "empty vision batch");
        contract!(keep.iter().all(|k| k.len() == n), "keep sets differ in length");
        let ids: Vec<i64> = keep.iter().flatten().map(|&i| i as i64).collect();
        let mut out = self.image.run(vec![
            ("patches", Tensor::f32(&[p, pd], patches.to_vec())?),
            ("keep", Tensor::i64(&[b, n], ids)?),
        ])?;
        let e = self.config.embed_dim;
        let global = out.remove("image_embedding").expect("validated output");
        contract!(
            global.shape() == [b, e],
            "image_embedding has shape {:?}, expected [{b}, {e}]",
            global.shape()
        );
        let global = global.into_f32_vec()?;
        let tokens = if with_tokens {
            let t = out.remove("patch_tokens").expect("validated output");
            contract!(
                t.shape() == [b, n, e],
                "patch_tokens has shape {:?}, expected [{b}, {n}, {e}]",
                t.shape()
            );
            Some(t.into_f32_vec()?)
        } else {
            None
        };
        Ok((0..b)
            .map(|i| VisionOutput {
                class_embedding: global[i * e..(i + 1) * e].to_vec(),
                patch_tokens: tokens
                    .as_ref()
                    .map(|t| t[i * n * e..(i + 1) * n * e].chunks(e).map(<[f32]>::to_vec).collect()),
            })
            .collect())
    }
}
