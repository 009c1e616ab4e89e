use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use winseg::data::{read_heatmap, write_toy_dataset, ToySpec};

fn winseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_winseg"))
        .args(args)
        .env_remove("WINSEG_MODEL_DIR")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stdout_lines(out: &Output) -> Vec<Value> {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).expect("JSON line"))
        .collect()
}

fn stderr_error(out: &Output) -> Value {
    let v: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    v["error"].clone()
}

/// Two small categories; the test images are 240×360 so they are tiled.
fn toy() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    for (name, seed) in [("tile", 0), ("wood", 1)] {
        let spec = ToySpec {
            category: name.into(),
            width: 360,
            train: 2,
            test_normal: 2,
            test_defect: 2,
            seed,
            ..ToySpec::default()
        };
        write_toy_dataset(dir.path(), &spec).unwrap();
    }
    dir
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn prompts_json_counts() {
    let v = stdout_json(&winseg(&["prompts", "--object", "bottle", "--json"]));
    assert_eq!(v["normal"].as_array().unwrap().len(), 154);
    assert_eq!(v["anomaly"].as_array().unwrap().len(), 88);
    let ablated = stdout_json(&winseg(&[
        "prompts",
        "--json",
        "--no-state-ensemble",
        "--no-template-ensemble",
    ]));
    assert_eq!(ablated["normal"], serde_json::json!(["a photo of a object."]));
}

#[test]
fn score_writes_heatmap_at_input_size() {
    let data = toy();
    let img = data.path().join("tile/test/square/000.png");
    let heat = data.path().join("out/heat.png");
    let lines = stdout_lines(&winseg(&[
        "score",
        "--model",
        "reference:0",
        "--object",
        "tile",
        "--heatmap",
        s(&heat),
        s(&img),
    ]));
    assert_eq!(lines.len(), 1);
    let score = lines[0]["score"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&score));
    assert_eq!(lines[0]["tiles"], 2);
    assert_eq!(lines[0]["dims"], serde_json::json!([240, 360]));
    assert_eq!(read_heatmap(&heat).unwrap().dims(), (240, 360));
}

#[test]
fn eval_zero_shot_is_reproducible_and_jobs_independent() {
    let data = toy();
    let out = |dir: &str, jobs: &str| {
        let target = data.path().join(dir);
        let v = stdout_json(&winseg(&[
            "eval",
            "--model",
            "reference:0",
            "--root",
            s(data.path()),
            "--shots",
            "0",
            "--seeds",
            "2",
            "--jobs",
            jobs,
            "--out",
            s(&target),
        ]));
        assert_eq!(v["reports"][0]["k"], 0);
        target
    };
    let (a, b, c) = (out("a", "1"), out("b", "1"), out("c", "2"));
    for file in ["eval_k0.json", "eval_k0.csv"] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
    let read =
        |d: &PathBuf| -> Value { serde_json::from_slice(&std::fs::read(d.join("eval_k0.json")).unwrap()).unwrap() };
    let (ra, rc) = (read(&a), read(&c));
    assert_eq!(ra["results"], rc["results"]);
    assert_eq!(ra["std"], "population");
    let results = ra["results"].as_object().unwrap();
    assert_eq!(results.keys().collect::<Vec<_>>(), ["Mean", "tile", "wood"]);
    for row in results.values() {
        for cell in row.as_object().unwrap().values() {
            assert_eq!(cell["std"], 0.0);
            let m = cell["mean"].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&m));
        }
    }
    let csv = std::fs::read_to_string(a.join("eval_k0.csv")).unwrap();
    let header = csv.lines().nth(1).unwrap();
    assert!(
        header.starts_with("category,image_aupr_mean,image_aupr_std,image_auroc_mean"),
        "{header}"
    );
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 4);
}

#[test]
fn fewshot_memory_round_trip() {
    let data = toy();
    let mem = data.path().join("memory");
    let img = data.path().join("tile/test/square/001.png");
    let first = stdout_lines(&winseg(&[
        "fewshot",
        "--model",
        "reference:0",
        "--root",
        s(data.path()),
        "--category",
        "tile",
        "--k",
        "1",
        "--seed",
        "3",
        "--save-memory",
        s(&mem),
        s(&img),
    ]));
    assert!(mem.join("banks.wctf").is_file() && mem.join("memory.json").is_file());
    assert_eq!(first[0]["memory"]["k"], 1);
    assert_eq!(first[0]["memory"]["seed"], 3);
    // one 240×360 reference splits into two tiles
    let banks: Vec<u64> = first[0]["memory"]["banks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|b| b["len"].as_u64().unwrap())
        .collect();
    assert_eq!(banks, [450, 392, 338]);

    let second = stdout_lines(&winseg(&[
        "fewshot",
        "--model",
        "reference:0",
        "--object",
        "tile",
        "--memory",
        s(&mem),
        s(&img),
    ]));
    assert_eq!(first[1]["score"], second[1]["score"]);
    assert_eq!(
        first[0]["memory"]["reference_ids"],
        second[0]["memory"]["reference_ids"]
    );
}

#[test]
fn memory_from_another_encoder_is_rejected() {
    let data = toy();
    let mem = data.path().join("memory");
    let refs = data.path().join("tile/train/good/000.png");
    let out = winseg(&[
        "fewshot",
        "--model",
        "reference:0",
        "--ref",
        s(&refs),
        "--save-memory",
        s(&mem),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = winseg(&["fewshot", "--model", "reference:1", "--memory", s(&mem), s(&refs)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_error(&out)["kind"], "config");
}

#[test]
fn errors_are_json_with_exit_codes() {
    let out = winseg(&["score", "--model", "reference:0"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_error(&out)["kind"], "usage");

    let out = winseg(&[
        "eval",
        "--model",
        "reference:0",
        "--root",
        "/x",
        "--out",
        "/y",
        "--seeds",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = winseg(&["score", "--model", "reference:0", "/definitely/missing.png"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_error(&out);
    assert!(err["kind"] == "io" || err["kind"] == "image", "{err}");
    assert!(err["message"].as_str().unwrap().contains("missing.png"));

    let out = winseg(&["score", "--model", "/no/such/model", "a.png"]);
    assert_eq!(out.status.code(), Some(1));

    let out = winseg(&["--version"]);
    assert!(out.status.success());
}

#[test]
fn bench_reports_token_work_and_speedup() {
    let v = stdout_json(&winseg(&[
        "bench",
        "--model",
        "reference:0",
        "--scales",
        "2",
        "--repeats",
        "1",
    ]));
    let rows = v["rows"].as_array().unwrap();
    let tokens = |name: &str| {
        rows.iter().find(|r| r["name"] == name).unwrap()["tokens"]
            .as_u64()
            .unwrap()
    };
    assert_eq!(tokens("windows_batched"), 980);
    assert_eq!(tokens("windows_tiling"), 44_296);
    assert!(v["tiling_over_batched"].as_f64().unwrap() >= 2.0, "{v}");
}
