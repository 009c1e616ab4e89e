//! Benchmark protocol: every category of a manifest scored at several shot
//! counts, each few-shot count repeated over seeded reference draws.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_mask, preprocess, sample_references, selection_digest, Category, DatasetManifest, Sample};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate_runs, aupr, auroc, f1_max, pixel_auroc_with, pixel_f1_max_with, pro_with, EvalReport, LabeledScores,
    PixelPooling, SeedRun, SegPair, PRO_FPR_LIMIT, PRO_THRESHOLDS,
};
use crate::pipeline::{Detector, PipelineConfig, Prediction, QueryFeatures};
use crate::prompt::PromptLibrary;

pub const METRICS: [&str; 6] = [
    "image_auroc",
    "image_aupr",
    "image_f1_max",
    "pixel_auroc",
    "pro",
    "pixel_f1_max",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub shots: Vec<usize>,
    pub seeds: Vec<u64>,
    pub pooling: PixelPooling,
    /// Categories evaluated concurrently.
    pub jobs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            shots: vec![0, 1, 2, 4],
            seeds: (0..5).collect(),
            pooling: PixelPooling::Pooled,
            jobs: 1,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shots.is_empty() {
            return Err(Error::Config("no shot counts given".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds given".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn needs_train_split(&self) -> bool {
        self.shots.iter().any(|&k| k > 0)
    }
}

/// A test image encoded once, with its label and mask at the scoring size.
#[derive(Debug, Clone)]
pub struct EncodedQuery {
    pub id: String,
    pub anomalous: bool,
    pub mask: Vec<bool>,
    pub features: QueryFeatures,
}

pub fn encode_query(scorer: &Detector<'_>, sample: &Sample) -> Result<EncodedQuery> {
    let img = preprocess(&sample.path, &scorer.config().preprocess)?;
    let dims = img.tensor.dims();
    let mask = match (&sample.mask, sample.label.is_anomalous()) {
        (Some(path), _) => load_mask(path, dims)?,
        (None, false) => vec![false; dims.0 * dims.1],
        (None, true) => {
            return Err(Error::Manifest(format!("anomalous image {} has no mask", sample.id)));
        }
    };
    Ok(EncodedQuery {
        id: sample.id.clone(),
        anomalous: sample.label.is_anomalous(),
        mask,
        features: scorer.extract(&img.tensor)?,
    })
}

/// The six metrics of one category from its predictions.
pub fn category_metrics(
    queries: &[EncodedQuery],
    predictions: &[Prediction],
    pooling: PixelPooling,
) -> Result<BTreeMap<String, f64>> {
    let labels = LabeledScores::new(
        predictions.iter().map(|p| p.score).collect(),
        queries.iter().map(|q| q.anomalous).collect(),
    )?;
    let pairs = queries
        .iter()
        .zip(predictions)
        .map(|(q, p)| SegPair::from_map(&p.map, q.mask.clone()))
        .collect::<Result<Vec<_>>>()?;
    let values = [
        auroc(&labels)?,
        aupr(&labels)?,
        f1_max(&labels)?.score,
        pixel_auroc_with(&pairs, pooling)?,
        pro_with(&pairs, PRO_FPR_LIMIT, PRO_THRESHOLDS, pooling)?,
        pixel_f1_max_with(&pairs, pooling)?,
    ];
    Ok(METRICS.iter().map(|m| m.to_string()).zip(values).collect())
}

/// One seeded run of a category.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryRun {
    pub seed: u64,
    pub reference_ids: Vec<String>,
    pub selection_digest: Option<String>,
    pub metrics: BTreeMap<String, f64>,
}

/// Runs of one category for every shot count, in `EvalConfig::shots` order.
pub fn evaluate_category(
    encoder: &Encoder,
    manifest: &DatasetManifest,
    category: &Category,
    library: &PromptLibrary,
    config: &PipelineConfig,
    eval: &EvalConfig,
) -> Result<Vec<Vec<CategoryRun>>> {
    let zero_shot = Detector::from_prompts(encoder, &category.object_label, library, config.clone())?;
    let queries = category
        .test
        .iter()
        .map(|s| encode_query(&zero_shot, s))
        .collect::<Result<Vec<_>>>()?;
    let score_all = |scorer: &Detector<'_>| -> Result<Vec<Prediction>> {
        queries.iter().map(|q| scorer.score_features(&q.features)).collect()
    };
    let mut per_shot = Vec::with_capacity(eval.shots.len());
    let mut zero_metrics = None;
    for &k in &eval.shots {
        let mut runs = Vec::with_capacity(eval.seeds.len());
        if k == 0 {
            // no sampling involved: every seed shares one result
            if zero_metrics.is_none() {
                zero_metrics = Some(category_metrics(&queries, &score_all(&zero_shot)?, eval.pooling)?);
            }
            for &seed in &eval.seeds {
                runs.push(CategoryRun {
                    seed,
                    reference_ids: Vec::new(),
                    selection_digest: None,
                    metrics: zero_metrics.clone().expect("computed above"),
                });
            }
        } else {
            for &seed in &eval.seeds {
                let ids = sample_references(manifest, &category.name, k, seed)?;
                let refs = ids
                    .iter()
                    .map(|id| {
                        let s = category.train.iter().find(|s| &s.id == id).expect("sampled from train");
                        preprocess(&s.path, &config.preprocess).map(|p| p.tensor)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let memory = zero_shot.build_memory(&refs, ids.clone(), Some(seed))?;
                let scorer =
                    Detector::new(encoder, zero_shot.prototypes().clone(), config.clone())?.with_memory(memory)?;
                runs.push(CategoryRun {
                    seed,
                    selection_digest: Some(selection_digest(&ids)),
                    reference_ids: ids,
                    metrics: category_metrics(&queries, &score_all(&scorer)?, eval.pooling)?,
                });
            }
        }
        per_shot.push(runs);
    }
    Ok(per_shot)
}

/// The report for one shot count plus the reference draws behind it.
#[derive(Debug, Clone)]
pub struct ShotReport {
    pub shots: usize,
    pub report: EvalReport,
    /// category → runs in seed order.
    pub runs: Vec<(String, Vec<CategoryRun>)>,
}

impl ShotReport {
    /// Reference selections per category and seed, for the run record.
    pub fn selections_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .runs
            .iter()
            .map(|(cat, runs)| {
                let list = runs
                    .iter()
                    .map(|r| {
                        serde_json::json!({
                            "seed": r.seed,
                            "reference_ids": r.reference_ids,
                            "digest": r.selection_digest,
                        })
                    })
                    .collect();
                (cat.clone(), serde_json::Value::Array(list))
            })
            .collect();
        serde_json::Value::Object(map)
    }
}

/// Evaluates every category of `manifest`, `eval.jobs` at a time. Results are
/// merged in manifest order regardless of scheduling.
pub fn evaluate(
    encoder: &Encoder,
    manifest: &DatasetManifest,
    library: &PromptLibrary,
    config: &PipelineConfig,
    eval: &EvalConfig,
) -> Result<Vec<ShotReport>> {
    eval.validate()?;
    config.validate(encoder)?;
    if manifest.categories.is_empty() {
        return Err(Error::Manifest("the manifest has no categories".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(eval.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", eval.jobs)))?;
    let per_category: Vec<Vec<Vec<CategoryRun>>> = pool.install(|| {
        manifest
            .categories
            .par_iter()
            .map(|c| evaluate_category(encoder, manifest, c, library, config, eval))
            .collect::<Result<_>>()
    })?;
    let mut reports = Vec::with_capacity(eval.shots.len());
    for (si, &k) in eval.shots.iter().enumerate() {
        let seed_runs: Vec<SeedRun> = eval
            .seeds
            .iter()
            .enumerate()
            .map(|(ri, &seed)| {
                let mut run = SeedRun::new(seed);
                for (c, cat) in manifest.categories.iter().enumerate() {
                    run.push(cat.name.clone(), per_category[c][si][ri].metrics.clone());
                }
                run
            })
            .collect();
        reports.push(ShotReport {
            shots: k,
            report: aggregate_runs(&seed_runs)?,
            runs: manifest
                .categories
                .iter()
                .zip(&per_category)
                .map(|(cat, runs)| (cat.name.clone(), runs[si].clone()))
                .collect(),
        });
    }
    Ok(reports)
}
