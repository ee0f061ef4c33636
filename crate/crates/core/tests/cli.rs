use std::path::{Path, PathBuf};
use std::process::Command;

use jpool::cli::{main_with, PredictionRecord};
use serde_json::Value;

fn jpool(args: &[&str]) -> jpool::Result<()> {
    main_with(std::iter::once("jpool").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, videos: usize, train: usize) -> PathBuf {
    let (v, t) = (videos.to_string(), train.to_string());
    jpool(&["synth", "--out", s(dir), "--videos", &v, "--train", &t, "--seed", "11"]).unwrap();
    dir.join("manifest.json")
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn classify_then_eval_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), 18, 12);
    let out = tmp.path().join("cls");
    jpool(&["classify", "--manifest", s(&manifest), "--out", s(&out), "--epochs", "300"]).unwrap();
    let rep = report(&out);
    let acc = rep["metrics"]["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(rep["metrics"]["descriptor_len"], 2048);

    let preds: Vec<PredictionRecord> =
        serde_json::from_str(&std::fs::read_to_string(out.join("predictions.json")).unwrap()).unwrap();
    assert_eq!(preds.len(), 6);
    let hits = preds.iter().filter(|r| r.label == r.prediction).count();
    assert_eq!(hits as f64 / 6.0, acc);

    let ev = tmp.path().join("eval");
    std::fs::create_dir_all(&ev).unwrap();
    jpool(&["eval", "--predictions", s(&out.join("predictions.json")), "--out", s(&ev)]).unwrap();
    assert_eq!(report(&ev)["metrics"]["accuracy"].as_f64().unwrap(), acc);
}

#[test]
fn extract_reruns_are_bitwise_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), 6, 6);
    let run = |name: &str| {
        let out = tmp.path().join(name);
        jpool(&["extract", "--manifest", s(&manifest), "--out", s(&out), "--agg", "advanced", "--alpha", "0.2"]).unwrap();
        out
    };
    let (a, b) = (run("a"), run("b"));
    let mut names: Vec<_> = std::fs::read_dir(a.join("descriptors"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    // tensor plus sidecar per video
    assert_eq!(names.len(), 12);
    for n in &names {
        let x = std::fs::read(a.join("descriptors").join(n)).unwrap();
        let y = std::fs::read(b.join("descriptors").join(n)).unwrap();
        assert_eq!(x, y, "{n:?}");
    }
    assert_eq!(report(&a)["metrics"], report(&b)["metrics"]);
}

#[test]
fn noise_sweep_writes_one_row_per_ratio() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), 12, 9);
    let out = tmp.path().join("sweep");
    jpool(&["noise-sweep", "--manifest", s(&manifest), "--out", s(&out), "--alphas", "0,0.5", "--epochs", "200"]).unwrap();
    let csv = std::fs::read_to_string(out.join("noise_sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "alpha,accuracy");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,") && lines[2].starts_with("0.5,"));

    let bad = jpool(&["noise-sweep", "--manifest", s(&manifest), "--out", s(&out), "--alphas=-1"]);
    assert!(bad.is_err());
}

#[test]
fn gradcheck_passes_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    jpool(&["gradcheck", "--seed", "3", "--out", s(tmp.path())]).unwrap();
    let checks = report(tmp.path())["metrics"]["checks"].as_array().unwrap().len();
    assert!(checks >= 9);
}

#[test]
fn attention_then_finetune() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), 4, 3);
    let att = tmp.path().join("att");
    jpool(&["train-attention", "--manifest", s(&manifest), "--out", s(&att), "--epochs", "1", "--batch", "2"]).unwrap();
    assert!(att.join("attention").is_dir());
    let rep = report(&att);
    let losses = rep["metrics"]["losses"].as_array().unwrap();
    assert!(!losses.is_empty() && losses.iter().all(|l| l.as_f64().unwrap().is_finite()));

    let ft = tmp.path().join("ft");
    jpool(&[
        "finetune", "--manifest", s(&manifest), "--out", s(&ft), "--checkpoint", s(&att), "--epochs", "1", "--batch", "2", "--lr", "0.003",
    ])
    .unwrap();
    assert!(ft.join("model").is_dir());
    let acc = report(&ft)["metrics"]["train_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_jpool");
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    let st = Command::new(bin)
        .args(["classify", "--manifest", s(&missing), "--out", s(tmp.path())])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&st.stderr).starts_with("error:"));

    let st = Command::new(bin)
        .args(["classify", "--manifest", s(&missing), "--out", s(tmp.path()), "--agg", "median"])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));

    let st = Command::new(bin).arg("--help").output().unwrap();
    assert!(st.status.success());
    let help = String::from_utf8_lossy(&st.stdout);
    for cmd in ["synth", "extract", "train-attention", "finetune", "classify", "eval", "gradcheck", "noise-sweep"] {
        assert!(help.contains(cmd), "{cmd}");
    }
}
