//! The `winseg` command line.
//!
//! Usage errors exit with 2, runtime errors with 1; both print
//! `{"error": {"kind": ..., "message": ...}}` on stderr.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::data::{
    export_heatmap, load_manifest, load_test_manifest, preprocess, sample_references, selection_digest, Layout,
    PreprocessSpec, SAMPLER_NAME,
};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalConfig};
use crate::memory::{FusionConfig, ReferenceMemory};
use crate::metrics::{MetricSummary, PixelPooling};
use crate::pipeline::{Detector, PipelineConfig};
use crate::prompt::{PromptLibrary, DEFAULT_TEMPERATURE};
use crate::tensor::ImageTensor;
use crate::windows::{gen_windows, Aggregation, CropScheme, ScaleSet};

#[derive(Debug, Parser)]
#[command(
    name = "winseg",
    version,
    about = "Zero- and few-shot anomaly classification and segmentation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the composed normal and anomaly prompts.
    Prompts(PromptsArgs),
    /// Zero-shot score and anomaly map of images.
    Score(ScoreArgs),
    /// Few-shot scoring against a memory of normal references.
    Fewshot(FewshotArgs),
    /// Full benchmark evaluation over shots and seeds.
    Eval(EvalArgs),
    /// Latency and token work of window encoding strategies.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PromptArgs {
    /// Object label substituted into the state words.
    #[arg(long)]
    pub object: Option<String>,
    /// JSON file with normal_states, anomaly_states and templates.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Use only the first normal and anomaly state.
    #[arg(long)]
    pub no_state_ensemble: bool,
    /// Use only the template "a photo of a [c]."
    #[arg(long)]
    pub no_template_ensemble: bool,
}

impl PromptArgs {
    fn library(&self) -> Result<PromptLibrary> {
        let lib = match &self.lexicon {
            Some(p) => PromptLibrary::load(p)?,
            None => PromptLibrary::default(),
        };
        Ok(lib.ablated(!self.no_state_ensemble, !self.no_template_ensemble))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationArg {
    Harmonic,
    Arithmetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolingArg {
    Pooled,
    PerImage,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// Interchange directory or `reference:<seed>`.
    #[arg(long, env = "WINSEG_MODEL_DIR")]
    pub model: String,
    #[command(flatten)]
    pub prompts: PromptArgs,
    /// Window kernels and image scale, e.g. `2,3+image`.
    #[arg(long, default_value = "2,3+image", value_parser = parse_scales)]
    pub scales: ScaleSet,
    /// Softmax temperature.
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    pub tau: f64,
    /// Classification crops: single, five or five:<scale>.
    #[arg(long, default_value = "single", value_parser = parse_crops)]
    pub multicrop: CropScheme,
    /// How overlapping window scores combine per patch.
    #[arg(long, value_enum, default_value_t = AggregationArg::Harmonic)]
    pub aggregation: AggregationArg,
    /// Weight of the zero-shot map in few-shot segmentation.
    #[arg(long, default_value_t = 0.5)]
    pub fusion_weight: f64,
    /// Few-shot scoring without the language path.
    #[arg(long)]
    pub no_language: bool,
    /// Few-shot scoring without the patch-token bank.
    #[arg(long)]
    pub no_patch_bank: bool,
    /// Window banks used for few-shot scoring, e.g. `3` (default: all).
    #[arg(long, value_delimiter = ',')]
    pub memory_kernels: Option<Vec<usize>>,
}

impl ModelArgs {
    fn pipeline(&self, encoder: &Encoder) -> PipelineConfig {
        PipelineConfig {
            preprocess: PreprocessSpec::with_target(encoder.config().input_resolution),
            scales: self.scales.clone(),
            aggregation: match self.aggregation {
                AggregationArg::Harmonic => Aggregation::Harmonic,
                AggregationArg::Arithmetic => Aggregation::Arithmetic,
            },
            crops: self.multicrop,
            temperature: self.tau,
            fusion: FusionConfig {
                language_weight: self.fusion_weight,
                use_language: !self.no_language,
                use_memory: true,
                use_patch_bank: !self.no_patch_bank,
                window_kernels: self.memory_kernels.clone(),
            },
        }
    }
}

fn parse_scales(s: &str) -> std::result::Result<ScaleSet, String> {
    ScaleSet::parse(s).map_err(|e| e.to_string())
}

fn parse_crops(s: &str) -> std::result::Result<CropScheme, String> {
    CropScheme::parse(s).map_err(|e| e.to_string())
}

/// `N` means seeds `0..N`; `a..b` a half-open range; `a,b,c` an explicit list.
pub fn parse_seeds(s: &str) -> std::result::Result<Vec<u64>, String> {
    let bad = || format!("bad seed list {s:?} (expected N, a..b or a,b,...)");
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        );
        (a..b).collect()
    } else if s.contains(',') {
        s.split(',')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<std::result::Result<_, _>>()?
    } else {
        (0..s.trim().parse::<u64>().map_err(|_| bad())?).collect()
    };
    if seeds.is_empty() {
        return Err(format!("seed list {s:?} is empty"));
    }
    Ok(seeds)
}

#[derive(Debug, Args)]
pub struct PromptsArgs {
    #[command(flatten)]
    pub prompts: PromptArgs,
    /// Emit `{"normal": [...], "anomaly": [...]}` instead of lines.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Heatmap path; only with a single image.
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
    /// Directory receiving `<stem>.png` heatmaps.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FewshotArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Normal reference images.
    #[arg(long = "ref")]
    pub refs: Vec<PathBuf>,
    /// Load a saved memory instead of encoding references.
    #[arg(long, conflicts_with = "refs")]
    pub memory: Option<PathBuf>,
    /// Dataset to sample references from (with --category and --k).
    #[arg(long, conflicts_with_all = ["refs", "memory"])]
    pub root: Option<PathBuf>,
    #[arg(long, default_value = "mvtec")]
    pub dataset_layout: Layout,
    #[arg(long, requires = "root")]
    pub category: Option<String>,
    /// Number of sampled references.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the memory to this directory.
    #[arg(long)]
    pub save_memory: Option<PathBuf>,
    /// Directory receiving `<stem>.png` heatmaps.
    #[arg(long)]
    pub out: Option<PathBuf>,
    pub images: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long, default_value = "mvtec")]
    pub dataset_layout: Layout,
    /// Shot counts; 0 is zero-shot.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,4")]
    pub shots: Vec<usize>,
    /// Alias of --shots for a single count.
    #[arg(long, conflicts_with = "shots")]
    pub k: Option<usize>,
    /// `N` (seeds 0..N), `a..b` or `a,b,...`.
    // the qualified path makes clap parse the whole list as one value
    #[arg(long, default_value = "5", value_parser = parse_seeds)]
    pub seeds: ::std::vec::Vec<u64>,
    /// Restrict to these categories.
    #[arg(long, value_delimiter = ',')]
    pub categories: Option<Vec<String>>,
    #[arg(long, value_enum, default_value_t = PoolingArg::Pooled)]
    pub pooling: PoolingArg,
    /// Categories evaluated concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Image to time on; a fixed synthetic image when omitted.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Skip the crop-and-resize baseline.
    #[arg(long)]
    pub skip_tiling: bool,
    /// Write the JSON result here as well.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

fn error_json(kind: &str, message: &str) -> String {
    json!({"error": {"kind": kind, "message": message}}).to_string()
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let _ = writeln!(err, "{}", error_json("usage", e.to_string().trim()));
            return 2;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{}", error_json(e.kind(), &e.to_string()));
            1
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Prompts(a) => cmd_prompts(&a, out),
        Command::Score(a) => cmd_score(&a, out),
        Command::Fewshot(a) => cmd_fewshot(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Bench(a) => cmd_bench(&a, out),
    }
}

fn emit(out: &mut dyn Write, text: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn heatmap_path(dir: &Path, image: &Path) -> PathBuf {
    let stem = image
        .file_stem()
        .map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned());
    dir.join(format!("{stem}.png"))
}

/// The run description embedded in every report.
fn run_record(model: &ModelArgs, encoder: &Encoder, pipeline: &PipelineConfig, extra: Value) -> Value {
    let mut v = json!({
        "model": model.model,
        "encoder_fingerprint": encoder.fingerprint(),
        "object": model.prompts.object,
        "lexicon": model.prompts.lexicon,
        "state_ensemble": !model.prompts.no_state_ensemble,
        "template_ensemble": !model.prompts.no_template_ensemble,
        "pipeline": pipeline,
        "sampler": SAMPLER_NAME,
        "version": env!("CARGO_PKG_VERSION"),
    });
    if let (Value::Object(base), Value::Object(more)) = (&mut v, extra) {
        base.extend(more);
    }
    v
}

fn cmd_prompts(a: &PromptsArgs, out: &mut dyn Write) -> Result<()> {
    let object = a.prompts.object.as_deref().unwrap_or("object");
    let sets = a.prompts.library()?.compose(object)?;
    if a.json {
        return emit(out, serde_json::to_string_pretty(&sets)?);
    }
    for p in &sets.normal {
        emit(out, format_args!("normal\t{p}"))?;
    }
    for p in &sets.anomaly {
        emit(out, format_args!("anomaly\t{p}"))?;
    }
    Ok(())
}

fn scorer<'e>(model: &ModelArgs, encoder: &'e Encoder, object: &str) -> Result<Detector<'e>> {
    Detector::from_prompts(encoder, object, &model.prompts.library()?, model.pipeline(encoder))
}

/// Scores `images` and prints one JSON object per image.
fn score_images(
    wc: &Detector<'_>,
    images: &[PathBuf],
    heatmap: Option<&Path>,
    dir: Option<&Path>,
    out: &mut dyn Write,
) -> Result<()> {
    for path in images {
        let img = preprocess(path, &wc.config().preprocess)?;
        let pred = wc.score(&img)?;
        let target = heatmap
            .map(Path::to_path_buf)
            .or_else(|| dir.map(|d| heatmap_path(d, path)));
        if let Some(t) = &target {
            if let Some(parent) = t.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            export_heatmap(&pred.map_at(img.original)?, t)?;
        }
        let line = json!({
            "image": path,
            "score": pred.score,
            "dims": [img.original.0, img.original.1],
            "tiles": pred.tiles,
            "max_pixel_score": pred.map.max(),
            "heatmap": target,
        });
        emit(out, line)?;
    }
    Ok(())
}

fn cmd_score(a: &ScoreArgs, out: &mut dyn Write) -> Result<()> {
    if a.heatmap.is_some() && a.images.len() != 1 {
        return Err(Error::Config(
            "--heatmap takes a single image; use --out for several".into(),
        ));
    }
    let encoder = Encoder::from_spec(&a.model.model)?;
    let wc = scorer(
        &a.model,
        &encoder,
        a.model.prompts.object.as_deref().unwrap_or("object"),
    )?;
    score_images(&wc, &a.images, a.heatmap.as_deref(), a.out.as_deref(), out)
}

fn cmd_fewshot(a: &FewshotArgs, out: &mut dyn Write) -> Result<()> {
    let encoder = Encoder::from_spec(&a.model.model)?;
    let mut object = a.model.prompts.object.clone();
    let memory = if let Some(dir) = &a.memory {
        ReferenceMemory::load(dir)?
    } else if let Some(root) = &a.root {
        let manifest = load_manifest(root, a.dataset_layout)?;
        let name = a
            .category
            .clone()
            .ok_or_else(|| Error::Config("--root needs --category".into()))?;
        let cat = manifest.category(&name)?;
        object.get_or_insert_with(|| cat.object_label.clone());
        let ids = sample_references(&manifest, &name, a.k, a.seed)?;
        let paths: Vec<PathBuf> = ids
            .iter()
            .map(|id| cat.train.iter().find(|s| &s.id == id).expect("sampled id").path.clone())
            .collect();
        let wc = scorer(&a.model, &encoder, object.as_deref().unwrap_or("object"))?;
        build_from_paths(&wc, &paths, ids, Some(a.seed))?
    } else if !a.refs.is_empty() {
        let wc = scorer(&a.model, &encoder, object.as_deref().unwrap_or("object"))?;
        let ids = a.refs.iter().map(|p| p.display().to_string()).collect();
        build_from_paths(&wc, &a.refs, ids, None)?
    } else {
        return Err(Error::Config(
            "give --ref images, --memory or --root with --category".into(),
        ));
    };
    if let Some(dir) = &a.save_memory {
        memory.save(dir)?;
    }
    let wc = scorer(&a.model, &encoder, object.as_deref().unwrap_or("object"))?.with_memory(memory)?;
    let provenance = &wc.memory().expect("attached").provenance;
    emit(
        out,
        json!({
            "memory": {
                "k": provenance.k,
                "reference_ids": provenance.reference_ids,
                "seed": provenance.seed,
                "selection_digest": selection_digest(&provenance.reference_ids),
                "banks": wc.memory().expect("attached").banks().map(|b| json!({"name": b.name(), "len": b.len()})).collect::<Vec<_>>(),
            }
        }),
    )?;
    score_images(&wc, &a.images, None, a.out.as_deref(), out)
}

fn build_from_paths(
    wc: &Detector<'_>,
    paths: &[PathBuf],
    ids: Vec<String>,
    seed: Option<u64>,
) -> Result<ReferenceMemory> {
    let refs = paths
        .iter()
        .map(|p| preprocess(p, &wc.config().preprocess).map(|x| x.tensor))
        .collect::<Result<Vec<_>>>()?;
    wc.build_memory(&refs, ids, seed)
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let eval = EvalConfig {
        shots: a.k.map_or_else(|| a.shots.clone(), |k| vec![k]),
        seeds: a.seeds.clone(),
        pooling: match a.pooling {
            PoolingArg::Pooled => PixelPooling::Pooled,
            PoolingArg::PerImage => PixelPooling::PerImage,
        },
        jobs: a.jobs,
    };
    eval.validate()?;
    // zero-shot runs never list the train split
    let mut manifest = if eval.needs_train_split() {
        load_manifest(&a.root, a.dataset_layout)?
    } else {
        load_test_manifest(&a.root, a.dataset_layout)?
    };
    if let Some(names) = &a.categories {
        manifest.retain(names)?;
    }
    let encoder = Encoder::from_spec(&a.model.model)?;
    let pipeline = a.model.pipeline(&encoder);
    let library = a.model.prompts.library()?;
    let reports = evaluate(&encoder, &manifest, &library, &pipeline, &eval)?;
    let base = run_record(
        &a.model,
        &encoder,
        &pipeline,
        json!({
            "root": a.root,
            "dataset_layout": a.dataset_layout,
            "categories": manifest.categories.iter().map(|c| &c.name).collect::<Vec<_>>(),
            "seeds": eval.seeds,
            "pooling": eval.pooling,
            "jobs": eval.jobs,
        }),
    );
    let mut written = Vec::new();
    for shot in &reports {
        let mut run = base.clone();
        run["k"] = json!(shot.shots);
        run["references"] = shot.selections_json();
        let stem = a.out.join(format!("eval_k{}", shot.shots));
        let json_path = stem.with_extension("json");
        let csv_path = stem.with_extension("csv");
        write_file(&json_path, &serde_json::to_vec_pretty(&shot.report.to_json(&run))?)?;
        write_file(&csv_path, shot.report.to_csv(&run)?.as_bytes())?;
        let mean = shot.report.row(crate::metrics::MEAN_ROW).expect("mean row");
        written.push(json!({
            "k": shot.shots,
            "json": json_path,
            "csv": csv_path,
            "mean": mean.iter().map(|(m, s)| (m.clone(), json!({"mean": s.mean, "std": s.std}))).collect::<serde_json::Map<_, _>>(),
        }));
    }
    emit(out, json!({ "reports": written }))
}

fn synthetic_image(side: usize) -> ImageTensor {
    ImageTensor::from_fn(side, side, |c, y, x| {
        let v = ((y * 31 + x * 17 + c * 7) % 64) as f32 / 32.0 - 1.0;
        if (side / 3..side / 2).contains(&y) && (side / 3..side / 2).contains(&x) {
            1.5
        } else {
            v
        }
    })
}

#[derive(Debug, Serialize)]
struct BenchRow {
    name: String,
    latency_ms: MetricSummary,
    tokens: u64,
}

fn time_rows(encoder: &Encoder, repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<(MetricSummary, u64)> {
    let mut ms = Vec::with_capacity(repeats);
    let mut tokens = 0;
    for _ in 0..repeats {
        encoder.reset_token_work();
        let t = Instant::now();
        f()?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
        tokens = encoder.token_work();
    }
    Ok((MetricSummary::from_values(ms)?, tokens))
}

fn cmd_bench(a: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    if a.repeats == 0 {
        return Err(Error::Config("--repeats must be at least 1".into()));
    }
    let encoder = Encoder::from_spec(&a.model.model)?;
    let cfg = *encoder.config();
    let img = match &a.image {
        Some(p) => {
            let t = preprocess(p, &PreprocessSpec::with_target(cfg.input_resolution))?.tensor;
            let side = cfg.input_resolution;
            t.crop(0, 0, side, side)?
        }
        None => synthetic_image(cfg.input_resolution),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", a.jobs)))?;
    let result = pool.install(|| -> Result<Value> {
        let plans = a
            .model
            .scales
            .kernels
            .iter()
            .map(|&k| gen_windows(cfg.grid, k))
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        let (lat, tok) = time_rows(&encoder, a.repeats, || {
            for p in &plans {
                encoder.encode_windows_batched(&img, p.masks())?;
            }
            Ok(())
        })?;
        rows.push(BenchRow {
            name: "windows_batched".into(),
            latency_ms: lat,
            tokens: tok,
        });
        if !a.skip_tiling {
            let (lat, tok) = time_rows(&encoder, a.repeats, || {
                for p in &plans {
                    encoder.encode_windows_by_tiling(&img, p.masks())?;
                }
                Ok(())
            })?;
            rows.push(BenchRow {
                name: "windows_tiling".into(),
                latency_ms: lat,
                tokens: tok,
            });
        }
        let (lat, tok) = time_rows(&encoder, a.repeats, || encoder.encode_patches(&img).map(drop))?;
        rows.push(BenchRow {
            name: "patch_tokens".into(),
            latency_ms: lat,
            tokens: tok,
        });
        let wc = scorer(
            &a.model,
            &encoder,
            a.model.prompts.object.as_deref().unwrap_or("object"),
        )?;
        let (lat, tok) = time_rows(&encoder, a.repeats, || wc.score_tensor(&img).map(drop))?;
        rows.push(BenchRow {
            name: "zero_shot_pipeline".into(),
            latency_ms: lat,
            tokens: tok,
        });
        let speedup = rows
            .iter()
            .find(|r| r.name == "windows_tiling")
            .map(|t| t.latency_ms.mean / rows[0].latency_ms.mean);
        let pipeline = a.model.pipeline(&encoder);
        Ok(json!({
            "run": run_record(&a.model, &encoder, &pipeline, json!({"repeats": a.repeats, "image": a.image})),
            "rows": rows,
            "tiling_over_batched": speedup,
        }))
    })?;
    if let Some(p) = &a.out {
        write_file(p, &serde_json::to_vec_pretty(&result)?)?;
    }
    emit(out, serde_json::to_string_pretty(&result)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("5").unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(parse_seeds("1").unwrap(), vec![0]);
        assert_eq!(parse_seeds("3..5").unwrap(), vec![3, 4]);
        assert_eq!(parse_seeds("7,2").unwrap(), vec![7, 2]);
        assert!(parse_seeds("0").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn usage_errors_exit_two_with_json() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(
            ["winseg", "score", "--scales", "2,x", "--model", "reference:0", "a.png"],
            &mut out,
            &mut err,
        );
        assert_eq!(code, 2);
        let v: Value = serde_json::from_slice(&err).unwrap();
        assert_eq!(v["error"]["kind"], "usage");
    }

    #[test]
    fn prompts_default_counts() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(run(["winseg", "prompts", "--object", "bottle"], &mut out, &mut err), 0);
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("normal\t")).count(), 154);
        assert_eq!(text.lines().filter(|l| l.starts_with("anomaly\t")).count(), 88);
    }
}
