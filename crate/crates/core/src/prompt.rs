//! Compositional prompt ensembles and the two class prototypes derived from them.
//!
//! A prompt is built in two stages: a state pattern such as `"flawless [o]"`
//! receives the object label, then the resulting phrase fills the `[c]` slot of
//! a template such as `"a photo of a [c]."`. Every state is crossed with every
//! template, and the text embeddings of each class are averaged into a single
//! prototype.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::linalg::{check_unit, dot, normalize, sigmoid};

pub const OBJECT_SLOT: &str = "[o]";
pub const CLASS_SLOT: &str = "[c]";

pub const DEFAULT_NORMAL_STATES: [&str; 7] = [
    "[o]",
    "flawless [o]",
    "perfect [o]",
    "unblemished [o]",
    "[o] without flaw",
    "[o] without defect",
    "[o] without damage",
];

pub const DEFAULT_ANOMALY_STATES: [&str; 4] = ["damaged [o]", "[o] with flaw", "[o] with defect", "[o] with damage"];

pub const DEFAULT_TEMPLATES: [&str; 22] = [
    "a cropped photo of the [c].",
    "a cropped photo of a [c].",
    "a close-up photo of a [c].",
    "a close-up photo of the [c].",
    "a bright photo of a [c].",
    "a bright photo of the [c].",
    "a dark photo of the [c].",
    "a dark photo of a [c].",
    "a jpeg corrupted photo of a [c].",
    "a jpeg corrupted photo of the [c].",
    "a blurry photo of the [c].",
    "a blurry photo of a [c].",
    "a photo of a [c].",
    "a photo of the [c].",
    "a photo of a small [c].",
    "a photo of the small [c].",
    "a photo of a large [c].",
    "a photo of the large [c].",
    "a photo of the [c] for visual inspection.",
    "a photo of a [c] for visual inspection.",
    "a photo of the [c] for anomaly detection.",
    "a photo of a [c] for anomaly detection.",
];

/// Default temperature: the usual CLIP logit scale of 100.
pub const DEFAULT_TEMPERATURE: f64 = 0.01;

fn check_slot(pattern: &str, slot: &'static str) -> Result<()> {
    if pattern.matches(slot).count() == 1 {
        Ok(())
    } else {
        Err(Error::Slot {
            pattern: pattern.to_string(),
            slot,
        })
    }
}

/// Normal and anomalous state patterns, each holding the `[o]` slot once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateLexicon {
    pub normal_states: Vec<String>,
    pub anomaly_states: Vec<String>,
    /// Extra dataset-specific normal states, appended after `normal_states`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub task_specific_normal: Vec<String>,
    /// Extra dataset-specific anomalous states, e.g. `"[o] with missing part"`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub task_specific_anomaly: Vec<String>,
}

impl Default for StateLexicon {
    fn default() -> Self {
        Self {
            normal_states: DEFAULT_NORMAL_STATES.iter().map(|s| s.to_string()).collect(),
            anomaly_states: DEFAULT_ANOMALY_STATES.iter().map(|s| s.to_string()).collect(),
            task_specific_normal: Vec::new(),
            task_specific_anomaly: Vec::new(),
        }
    }
}

impl StateLexicon {
    pub fn new(normal_states: Vec<String>, anomaly_states: Vec<String>) -> Result<Self> {
        let lexicon = Self {
            normal_states,
            anomaly_states,
            task_specific_normal: Vec::new(),
            task_specific_anomaly: Vec::new(),
        };
        lexicon.validate()?;
        Ok(lexicon)
    }

    pub fn with_task_specific(mut self, normal: Vec<String>, anomaly: Vec<String>) -> Result<Self> {
        self.task_specific_normal = normal;
        self.task_specific_anomaly = anomaly;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        contract!(!self.normal_states.is_empty(), "normal state list is empty");
        contract!(!self.anomaly_states.is_empty(), "anomaly state list is empty");
        for p in self.normal().chain(self.anomaly()) {
            check_slot(p, OBJECT_SLOT)?;
        }
        Ok(())
    }

    /// All normal patterns, generic first then task-specific.
    pub fn normal(&self) -> impl Iterator<Item = &str> {
        self.normal_states
            .iter()
            .chain(&self.task_specific_normal)
            .map(String::as_str)
    }

    pub fn anomaly(&self) -> impl Iterator<Item = &str> {
        self.anomaly_states
            .iter()
            .chain(&self.task_specific_anomaly)
            .map(String::as_str)
    }
}

/// Template patterns holding the `[c]` slot once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TemplateSet {
    pub templates: Vec<String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            templates: DEFAULT_TEMPLATES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl TemplateSet {
    pub fn new(templates: Vec<String>) -> Result<Self> {
        let set = Self { templates };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        contract!(!self.templates.is_empty(), "template list is empty");
        for t in &self.templates {
            check_slot(t, CLASS_SLOT)?;
        }
        Ok(())
    }
}

/// On-disk prompt configuration:
/// `{"normal_states": [...], "anomaly_states": [...], "templates": [...]}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptLibrary {
    #[serde(flatten)]
    pub lexicon: StateLexicon,
    pub templates: TemplateSet,
}

impl PromptLibrary {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let lib: PromptLibrary = serde_json::from_str(text)?;
        lib.lexicon.validate()?;
        lib.templates.validate()?;
        Ok(lib)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn compose(&self, object_label: &str) -> Result<PromptSets> {
        compose_prompts(object_label, &self.lexicon, &self.templates)
    }

    /// Shrinks the ensemble for ablations: without the state ensemble only
    /// the first normal and anomaly states remain, without the template
    /// ensemble only `"a photo of a [c]."`.
    pub fn ablated(&self, state_ensemble: bool, template_ensemble: bool) -> Self {
        let mut out = self.clone();
        if !state_ensemble {
            out.lexicon.normal_states.truncate(1);
            out.lexicon.anomaly_states.truncate(1);
            out.lexicon.task_specific_normal.clear();
            out.lexicon.task_specific_anomaly.clear();
        }
        if !template_ensemble {
            out.templates.templates = vec!["a photo of a [c].".to_string()];
        }
        out
    }
}

/// Fully composed prompts for both classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSets {
    pub normal: Vec<String>,
    pub anomaly: Vec<String>,
}

fn cross(object_label: &str, states: impl Iterator<Item = impl AsRef<str>>, templates: &TemplateSet) -> Vec<String> {
    let mut out = Vec::new();
    for state in states {
        let phrase = state.as_ref().replacen(OBJECT_SLOT, object_label, 1);
        for t in &templates.templates {
            out.push(t.replacen(CLASS_SLOT, &phrase, 1));
        }
    }
    out
}

/// Crosses every state with every template, state-major.
pub fn compose_prompts(object_label: &str, lexicon: &StateLexicon, templates: &TemplateSet) -> Result<PromptSets> {
    contract!(!object_label.is_empty(), "object label must be non-empty");
    lexicon.validate()?;
    templates.validate()?;
    Ok(PromptSets {
        normal: cross(object_label, lexicon.normal(), templates),
        anomaly: cross(object_label, lexicon.anomaly(), templates),
    })
}

/// Anything that maps a prompt to a text embedding.
pub trait TextEncoder {
    fn encode_text(&self, prompt: &str) -> Result<Vec<f32>>;
}

/// Unit-norm mean text embeddings of the normal and anomalous classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrototypes {
    pub normal: Vec<f32>,
    pub anomaly: Vec<f32>,
    pub n_normal_prompts: usize,
    pub n_anomaly_prompts: usize,
    pub temperature: f64,
}

fn class_mean(prompts: &[String], encoder: &dyn TextEncoder) -> Result<Vec<f32>> {
    let mut acc: Vec<f64> = Vec::new();
    for prompt in prompts {
        let mut e = encoder.encode_text(prompt).map_err(|source| Error::Prompt {
            prompt: prompt.clone(),
            source: Box::new(source),
        })?;
        normalize(&mut e).map_err(|source| Error::Prompt {
            prompt: prompt.clone(),
            source: Box::new(source),
        })?;
        if acc.is_empty() {
            acc = vec![0.0; e.len()];
        }
        contract!(
            acc.len() == e.len(),
            "prompt {prompt:?} embedded to dimension {} instead of {}",
            e.len(),
            acc.len()
        );
        for (a, x) in acc.iter_mut().zip(&e) {
            *a += f64::from(*x);
        }
    }
    let n = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::Degenerate(
            "prompt embeddings cancel out; the class mean has zero norm".into(),
        ));
    }
    Ok(acc.into_iter().map(|x| (x / n) as f32).collect())
}

/// Embeds every prompt, normalizes each embedding, averages per class and
/// re-normalizes the means.
pub fn build_prototypes(prompts: &PromptSets, encoder: &dyn TextEncoder, temperature: f64) -> Result<ClassPrototypes> {
    contract!(!prompts.normal.is_empty(), "no normal prompts");
    contract!(!prompts.anomaly.is_empty(), "no anomaly prompts");
    contract!(
        temperature.is_finite() && temperature > 0.0,
        "temperature must be positive, got {temperature}"
    );
    let normal = class_mean(&prompts.normal, encoder)?;
    let anomaly = class_mean(&prompts.anomaly, encoder)?;
    contract!(normal.len() == anomaly.len(), "class prototypes disagree in dimension");
    Ok(ClassPrototypes {
        normal,
        anomaly,
        n_normal_prompts: prompts.normal.len(),
        n_anomaly_prompts: prompts.anomaly.len(),
        temperature,
    })
}

pub(crate) const EMBEDDING_NORM_TOL: f64 = 1e-4;

impl ClassPrototypes {
    pub fn dim(&self) -> usize {
        self.normal.len()
    }

    /// The same prototypes with the two classes exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            normal: self.anomaly.clone(),
            anomaly: self.normal.clone(),
            n_normal_prompts: self.n_anomaly_prompts,
            n_anomaly_prompts: self.n_normal_prompts,
            temperature: self.temperature,
        }
    }

    fn check_input(&self, embedding: &[f32]) -> Result<()> {
        contract!(
            embedding.len() == self.dim(),
            "embedding has dimension {} but prototypes have {}",
            embedding.len(),
            self.dim()
        );
        check_unit(embedding, EMBEDDING_NORM_TOL, "image embedding")
    }

    /// Anomaly-class probability of the binary softmax over the two prototypes.
    pub fn zero_shot_score(&self, embedding: &[f32]) -> Result<f64> {
        self.check_input(embedding)?;
        Ok(self.score_unchecked(embedding))
    }

    pub(crate) fn score_unchecked(&self, embedding: &[f32]) -> f64 {
        let s_anomaly = dot(embedding, &self.anomaly);
        let s_normal = dot(embedding, &self.normal);
        score_from_similarities(s_anomaly, s_normal, self.temperature)
    }

    /// One-class baseline: the negated similarity to the normal prototype.
    pub fn one_class_score(&self, embedding: &[f32]) -> Result<f64> {
        self.check_input(embedding)?;
        Ok(-dot(embedding, &self.normal))
    }
}

/// `exp(s₊/τ) / (exp(s₊/τ) + exp(s₋/τ))`, evaluated as a logistic.
pub fn score_from_similarities(s_anomaly: f64, s_normal: f64, temperature: f64) -> f64 {
    sigmoid((s_anomaly - s_normal) / temperature)
}
