use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lnt::checkpoint::Checkpoint;
use lnt::data::load_csv;
use lnt::Tensor;

fn lnt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lnt"))
        .args(args)
        .env("LNT_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = lnt(args);
    assert!(
        out.status.success(),
        "lnt {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, seed: &str, fraction: &str) {
    ok(&[
        "synth", "--channels", "3", "--train-len", "4000", "--test-len", "6000",
        "--anomaly-fraction", fraction, "--seed", seed, "--out", s(dir),
    ]);
}

/// Synthesizes data and trains a one-epoch model with a decoder.
fn trained(dir: &Path) -> PathBuf {
    synth(dir, "3", "0.1");
    let ck = dir.join("model.lntc");
    ok(&[
        "train", "--data", s(&dir.join("train.csv")), "--config", "small", "--epochs", "1",
        "--seed", "1", "--decoder", "--decoder-epochs", "1", "--out", s(&ck),
    ]);
    ck
}

#[test]
fn synth_is_reproducible_and_hits_the_fraction() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth(a.path(), "7", "0.1");
    synth(b.path(), "7", "0.1");
    for f in ["train.csv", "test.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let test = load_csv(&a.path().join("test.csv")).unwrap();
    assert!((test.labeled_fraction() - 0.10).abs() <= 0.02);
    let train = load_csv(&a.path().join("train.csv")).unwrap();
    assert!(train.labels.unwrap_or_default().iter().all(|&l| l == 0));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn zero_fraction_leaves_labels_clear() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "2", "0");
    let test = load_csv(&dir.path().join("test.csv")).unwrap();
    assert!(test.labels.unwrap().iter().all(|&l| l == 0));
}

#[test]
fn missing_input_names_the_path() {
    let out = lnt(&["train", "--data", "/nonexistent/train.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/train.csv"));
}

#[test]
fn train_score_eval_viz_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ck = trained(d);
    assert!(d.join("model.report.csv").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("model.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config"]["epochs"], "1");
    assert_eq!(manifest["checkpoint_sha256"].as_str().unwrap().len(), 64);

    let test = d.join("test.csv");
    let (s1, s2, s3) = (d.join("s1.csv"), d.join("s2.csv"), d.join("cpc.csv"));
    ok(&["score", "--checkpoint", s(&ck), "--data", s(&test), "--out", s(&s1)]);
    ok(&["score", "--checkpoint", s(&ck), "--data", s(&test), "--out", s(&s2)]);
    ok(&["score", "--checkpoint", s(&ck), "--data", s(&test), "--method", "cpc-approx", "--out", s(&s3)]);
    assert_eq!(fs::read(&s1).unwrap(), fs::read(&s2).unwrap());
    let rows = fs::read_to_string(&s1).unwrap().lines().count() - 1;
    assert_eq!(rows, 6000);
    assert_eq!(fs::read_to_string(&s3).unwrap().lines().count() - 1, rows);

    // the checkpoint re-scores identically after a reload through the library
    let loaded = Checkpoint::load(&ck).unwrap();
    let series = loaded.norm.as_ref().unwrap().standardize(&load_csv(&test).unwrap()).unwrap();
    let lib = lnt::scoring::score(
        &series.values.cast::<f32>(),
        &loaded.model,
        lnt::scoring::Method::Ddcl,
        &Default::default(),
    )
    .unwrap();
    let file = load_csv(&s1).unwrap();
    let col = file.channels.iter().position(|c| c == "score").unwrap();
    assert_eq!(file.channel(col), &lib.scores[..]);

    let e = d.join("eval.csv");
    let out = ok(&["eval", "--scores", s(&s1), "--out", s(&e)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("auc"));
    let text = fs::read_to_string(&e).unwrap();
    let auc: f64 = text.lines().nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&auc));

    let views = d.join("views.csv");
    ok(&[
        "viz-decode", "--checkpoint", s(&ck), "--data", s(&test), "--start", "100", "--out", s(&views),
    ]);
    let text = fs::read_to_string(&views).unwrap();
    let mut groups: Vec<String> = Vec::new();
    let mut recon = Vec::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if groups.last().map(|g| g != f[0]).unwrap_or(true) {
            groups.push(f[0].to_string());
        }
        if f[0] == "reconstruction" {
            recon.push(f[3].parse::<f32>().unwrap());
        }
    }
    assert_eq!(groups.len(), loaded.model.config.transforms + 2);
    assert_eq!(groups[0], "original");
    assert_eq!(groups[1], "reconstruction");

    let (c, len, t_all) = (series.num_channels(), 720, series.len());
    let v = series.values.cast::<f32>();
    let x = Tensor::from_fn(vec![c, len], |i| v.data()[(i / len) * t_all + 100 + i % len]);
    let expected = loaded.model.decode(&loaded.model.encode(&x).unwrap()).unwrap();
    assert_eq!(recon, expected.data());
}

#[test]
fn eval_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let constant = d.join("const.csv");
    let mut text = String::from("index,score,label\n");
    for i in 0..50 {
        text.push_str(&format!("{i},1.5,{}\n", (i % 3 == 0) as u8));
    }
    fs::write(&constant, text).unwrap();
    let e = d.join("eval.csv");
    ok(&["eval", "--scores", s(&constant), "--out", s(&e)]);
    let line = fs::read_to_string(&e).unwrap().lines().nth(1).unwrap().to_string();
    assert_eq!(line.split(',').next().unwrap().parse::<f64>().unwrap(), 0.5);

    let labels = d.join("labels.csv");
    fs::write(&labels, "x,label\n0,1\n1,0\n").unwrap();
    let out = lnt(&["eval", "--scores", s(&constant), "--labels", s(&labels), "--out", s(&e)]);
    assert!(!out.status.success());

    let single = d.join("single.csv");
    fs::write(&single, "index,score,label\n0,0.1,0\n1,0.2,0\n").unwrap();
    let out = lnt(&["eval", "--scores", s(&single), "--out", s(&e)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("only class"));
}

#[test]
fn viz_without_decoder_fails() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "4", "0.1");
    let ck = d.join("m.lntc");
    ok(&["train", "--data", s(&d.join("train.csv")), "--epochs", "1", "--out", s(&ck)]);
    let out = lnt(&[
        "viz-decode", "--checkpoint", s(&ck), "--data", s(&d.join("test.csv")), "--out", s(&d.join("v.csv")),
    ]);
    assert!(!out.status.success());
}
