use std::path::Path;
use std::process::{Command, Output};

use fusecue_core::tensor::{read_tensor, write_image};
use fusecue_core::ImageTensor;

fn fusecue(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusecue"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = fusecue(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gray_image(path: &Path) {
    let img = ImageTensor::from_fn(1, 20, 24, |_, y, x| ((y * 7 + x * 13) % 23) as f32 / 22.0)
        .unwrap();
    write_image(path, &img).unwrap();
}

#[test]
fn paramcount_prints_decomposition() {
    let out = ok(&["paramcount"]);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("292"));
    let detail = lines.next().unwrap();
    assert!(detail.contains("288") && detail.contains("+ 2"), "{detail}");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(fusecue(&["paramcount", "--bogus"]).status.code(), Some(2));
    assert_eq!(fusecue(&["nosuchcommand"]).status.code(), Some(2));
    assert_eq!(fusecue(&["extract", "--cue", "fused", "--in", "a", "--out", "b"]).status.code(), Some(2));
    assert_eq!(fusecue(&["extract", "--help"]).status.code(), Some(0));
}

#[test]
fn failures_exit_1_with_structured_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = fusecue(&["extract", "--cue", "lbp", "--in", "/nonexistent.pgm", "--out", s(&dir.path().join("x.fct"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    let line: serde_json::Value = serde_json::from_str(err.lines().last().unwrap()).unwrap();
    assert_eq!(line["error"], "io");

    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"version": 7}"#).unwrap();
    let out = fusecue(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn extract_lbp_range() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("f.pgm");
    gray_image(&img);
    for cue in ["lbp", "wdf", "phase"] {
        let out = dir.path().join(format!("{cue}.fct"));
        ok(&["extract", "--cue", cue, "--in", s(&img), "--out", s(&out)]);
        let t = read_tensor(&out).unwrap();
        assert_eq!(t.dims(), (1, 20, 24));
        let (lo, hi) = t.min_max();
        match cue {
            "lbp" => assert!(lo >= -1.0 && hi <= 0.8, "{lo} {hi}"),
            _ => assert!(lo >= -1.0 && hi <= 1.0, "{lo} {hi}"),
        }
    }
}

#[test]
fn eval_on_fixture_scores() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.jsonl");
    let lines = [
        (0.1, 0, "r1"),
        (0.9, 0, "r2"),
        (0.8, 1, "f1"),
        (0.95, 1, "f2"),
    ]
    .map(|(score, label, v)| {
        format!(r#"{{"dataset": "fixture", "video_id": "{v}", "score": {score}, "label": {label}}}"#)
    });
    std::fs::write(&scores, lines.join("\n")).unwrap();
    let report = dir.path().join("report.json");
    let table = ok(&["eval", "--scores", s(&scores), "--out", s(&report)]);
    assert!(table.contains("0.7500"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["avg_auc"], 0.75);
    assert_eq!(json["per_dataset"]["fixture"]["frame_auc"], 0.75);
    assert!(json["config"]["scores"].is_string());

    let delta = dir.path().join("delta.json");
    ok(&["eval", "--scores", s(&scores), "--baseline-report", s(&report), "--out", s(&delta)]);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&delta).unwrap()).unwrap();
    assert_eq!(json["delta_points"], 0.0);
}

#[test]
fn augment_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("f.pgm");
    gray_image(&img);
    let rgb = dir.path().join("f.ppm");
    let gray = fusecue_core::tensor::read_image(&img).unwrap();
    let data = [gray.data(), gray.data(), gray.data()].concat();
    write_image(&rgb, &ImageTensor::new(3, 20, 24, data).unwrap()).unwrap();
    for out in ["a", "b"] {
        let dest = dir.path().join(out);
        ok(&["augment", "--in", s(&rgb), "--seed", "5", "--n-samples", "3", "--out", s(&dest)]);
    }
    for k in 0..3 {
        let name = format!("aug_{k:03}.ppm");
        let a = std::fs::read(dir.path().join("a").join(&name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(&name)).unwrap();
        assert_eq!(a, b);
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let synth_cfg = root.join("synth.json");
    std::fs::write(&synth_cfg, r#"{"version": 1, "n_videos": 4, "frames_per_video": 2, "test_fraction": 0.5}"#)
        .unwrap();
    let first = ok(&["synth", "--config", s(&synth_cfg), "--out", s(&root.join("data"))]);
    let second = ok(&["synth", "--config", s(&synth_cfg), "--out", s(&root.join("data2"))]);
    let digest = |line: &str| line.trim().split('\t').nth(1).unwrap().to_string();
    assert_eq!(digest(&first), digest(&second));
    let manifest = root.join("data").join("manifest.jsonl");

    let run_cfg = root.join("run.json");
    std::fs::write(&run_cfg, r#"{"version": 1, "widths": [4, 8], "batch_size": 4}"#).unwrap();
    for out in ["ckpt", "ckpt2"] {
        ok(&[
            "train", "--config", s(&run_cfg), "--assembly", "fused:lfws", "--epochs", "2",
            "--data", s(&manifest), "--out", s(&root.join(out)),
        ]);
    }
    let epoch = root.join("ckpt").join("epoch_002");
    assert_eq!(files(&epoch), files(&root.join("ckpt2").join("epoch_002")));
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(root.join("ckpt").join("train_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["config"]["widths"], serde_json::json!([4, 8]));
    assert_eq!(summary["epochs"].as_array().unwrap().len(), 2);

    let report = root.join("report.json");
    ok(&["eval", "--ckpt", s(&epoch), "--manifests", s(&manifest), "--out", s(&report)]);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let auc = json["avg_auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    assert_eq!(json["config"]["assembly"], "fused:lfws");

    let block = root.join("block.json");
    ok(&["export-frozen", "--ckpt", s(&epoch), "--out", s(&block)]);
    let frozen: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&block).unwrap()).unwrap();
    assert_eq!(frozen["version"], 1);
    assert_eq!(frozen["variant"], "LFWS");

    let frame = root.join("data").join("frames").join("v000_fake").join("000.ppm");
    let fused = root.join("fused.fct");
    ok(&["fuse", "--variant", "lfws", "--frozen", s(&block), "--in", s(&frame), "--out", s(&fused)]);
    let t = read_tensor(&fused).unwrap();
    assert_eq!(t.dims(), (1, 32, 32));
    assert!(t.data().iter().all(|&v| v >= 0.0));
    let wrong = fusecue(&["fuse", "--variant", "lfwl", "--frozen", s(&block), "--in", s(&frame), "--out", s(&fused)]);
    assert_eq!(wrong.status.code(), Some(1));

    // an RGB-only checkpoint has nothing to export
    ok(&[
        "train", "--config", s(&run_cfg), "--assembly", "rgb", "--epochs", "1", "--no-augment",
        "--data", s(&manifest), "--out", s(&root.join("rgb")),
    ]);
    let out = fusecue(&["export-frozen", "--ckpt", s(&root.join("rgb").join("epoch_001")), "--out", s(&block)]);
    assert_eq!(out.status.code(), Some(1));
}
