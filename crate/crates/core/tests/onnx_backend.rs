//! Runs the tiny exported CLIP in `tests/fixtures/tiny_clip` and compares
//! against the outputs PyTorch produced when exporting it
//! (`tests/fixtures/gen_tiny_clip.py`).

use std::path::PathBuf;

use serde::Deserialize;
use winseg::encoder::{Encoder, Graph, ImageTensor, OnnxTensor, WindowMask};
use winseg::linalg::normalized;

#[derive(Deserialize)]
struct Expected {
    image: Vec<f32>,
    global: Vec<f32>,
    patch_tokens: Vec<Vec<f32>>,
    windows: Vec<Vec<usize>>,
    window_embeddings: Vec<Vec<f32>>,
    prompts: Vec<String>,
    text: Vec<Vec<f32>>,
}

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny_clip")
}

fn expected() -> Expected {
    let text = std::fs::read_to_string(fixture().join("expected.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn assert_close(got: &[f32], want: &[f32], tol: f32, what: &str) {
    assert_eq!(got.len(), want.len(), "{what}: length");
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= tol, "{what}[{i}]: got {g}, want {w}");
    }
}

fn unit(v: &[f32]) -> Vec<f32> {
    normalized(v.to_vec()).unwrap()
}

#[test]
fn global_and_patch_tokens_match_export() {
    let exp = expected();
    let enc = Encoder::load(fixture()).unwrap();
    assert!(enc.fingerprint().starts_with("onnx:"));
    let img = ImageTensor::new(exp.image.clone(), 32, 32).unwrap();
    let (global, patches) = enc.encode_global_and_patches(&img).unwrap();
    assert_close(&global, &unit(&exp.global), 1e-4, "global");
    assert_eq!(patches.dims(), (4, 4));
    for (i, want) in exp.patch_tokens.iter().enumerate() {
        assert_close(patches.vector(i), &unit(want), 1e-4, &format!("patch {i}"));
    }
}

#[test]
fn window_embeddings_match_export() {
    let exp = expected();
    let enc = Encoder::load(fixture()).unwrap();
    let img = ImageTensor::new(exp.image.clone(), 32, 32).unwrap();
    let masks: Vec<WindowMask> = exp
        .windows
        .iter()
        .map(|w| WindowMask::from_indices((4, 4), w.clone()).unwrap())
        .collect();
    for (m, want) in masks.iter().zip(&exp.window_embeddings) {
        let got = enc.encode_window(&img, m).unwrap();
        assert_close(&got, &unit(want), 1e-4, "window");
    }
    let squares = [
        WindowMask::square((4, 4), (0, 0), 2).unwrap(),
        WindowMask::square((4, 4), (2, 2), 2).unwrap(),
    ];
    let batched = enc.encode_windows_batched(&img, &squares).unwrap();
    assert_eq!(batched.dims(), (1, 2));
    for (i, want) in exp.window_embeddings.iter().enumerate() {
        assert_close(batched.vector(i), &unit(want), 1e-4, "batched window");
    }
}

#[test]
fn text_embeddings_match_export() {
    let exp = expected();
    let enc = Encoder::load(fixture()).unwrap();
    for (prompt, want) in exp.prompts.iter().zip(&exp.text) {
        let got = enc.encode_text(prompt).unwrap();
        assert_close(&got, &unit(want), 1e-4, prompt);
    }
}

#[test]
fn long_prompt_is_rejected() {
    let enc = Encoder::load(fixture()).unwrap();
    let err = enc.encode_text("a prompt much longer than sixteen tokens").unwrap_err();
    assert_eq!(err.kind(), "prompt");
}

#[test]
fn graph_reports_its_interface() {
    let g = Graph::load(fixture().join("image.onnx")).unwrap();
    assert_eq!(g.input_names(), &["patches".to_string(), "keep".to_string()]);
    assert!(g.output_names().contains(&"patch_tokens".to_string()));
    assert_eq!(g.opset(), Some(17));
    let missing = g.run(vec![(
        "patches",
        OnnxTensor::f32(&[16, 192], vec![0.0; 16 * 192]).unwrap(),
    )]);
    assert!(missing.is_err());
}

#[test]
fn missing_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(fixture().join("config.json"), dir.path().join("config.json")).unwrap();
    let err = Encoder::load(dir.path()).unwrap_err();
    assert_eq!(err.kind(), "io");
}
