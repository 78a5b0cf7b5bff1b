use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use anomaly_forge_core::learn::train::stage_steps;
use anomaly_forge_core::learn::{lr_at, StagePlan};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_anomaly-forge"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Error line on stderr, parsed; asserts a failing exit.
fn err(args: &[&str]) -> Value {
    let out = run(args);
    assert_eq!(out.status.code(), Some(1), "{args:?} should fail");
    assert!(out.stdout.is_empty());
    let line = String::from_utf8(out.stderr).unwrap();
    serde_json::from_str(line.trim()).unwrap_or_else(|e| panic!("not JSON ({e}): {line}"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_config(dir: &Path, epochs: usize) -> PathBuf {
    let path = dir.join("config.json");
    let cfg = serde_json::json!({
        "seed": 5,
        "forge": {"n_train": 24, "n_test": 12},
        "train": {"epochs": epochs, "batch_size": 8}
    });
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn read_tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn forge_is_deterministic_and_half_abnormal() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        ok(&["--seed", "11", "--out", p(d.path()), "forge", "--n-train", "10", "--n-test", "6"]);
    }
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    assert_eq!(ta, tb);
    let manifest: Value = serde_json::from_slice(&std::fs::read(a.path().join("train/manifest.json")).unwrap()).unwrap();
    let samples = manifest["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 10);
    let abnormal: Vec<&Value> = samples.iter().filter(|s| s["label"] == "abnormal").collect();
    assert_eq!(abnormal.len(), 5);
    assert!(abnormal.iter().all(|s| !s["cells"].as_array().unwrap().is_empty()));

    let other = tempfile::tempdir().unwrap();
    ok(&["--seed", "12", "--out", p(other.path()), "forge", "--n-train", "10", "--n-test", "6"]);
    assert_ne!(read_tree(other.path()), ta);
}

#[test]
fn forge_with_no_samples_writes_empty_manifests() {
    let d = tempfile::tempdir().unwrap();
    ok(&["--seed", "1", "--out", p(d.path()), "forge", "--n-train", "0", "--n-test", "0"]);
    for split in ["train", "test"] {
        let m: Value = serde_json::from_slice(&std::fs::read(d.path().join(split).join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["samples"].as_array().unwrap().len(), 0);
    }
}

#[test]
fn seed_is_required_for_forge() {
    let d = tempfile::tempdir().unwrap();
    let e = err(&["--out", p(d.path()), "forge"]);
    assert_eq!(e["error"], "usage");
}

#[test]
fn train_eval_resume_round() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path(), 2);
    let out = d.path().join("run");
    let common = ["--config", p(&cfg), "--out", p(&out)];
    ok(&[&common[..], &["forge"]].concat());
    ok(&[&common[..], &["train"]].concat());
    for s in 1..=3 {
        assert!(out.join(format!("checkpoints/stage{s}.json")).is_file());
        assert!(out.join(format!("checkpoints/stage{s}.f64")).is_file());
    }

    // Learning rates in the log follow the warm-up plus cosine schedule.
    let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("step,stage,lr,L_c,L_f,L_d"));
    let mut per_stage = [0usize; 4];
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let stage: u8 = f[1].parse().unwrap();
        let mut plan = StagePlan::standard(stage, 2, anomaly_forge_core::learn::plan::DEFAULT_BASE_LR).unwrap();
        plan.batch_size = 8;
        let (total, warmup) = stage_steps(&plan, 24);
        per_stage[stage as usize] += 1;
        let k: usize = f[0].parse().unwrap();
        let expected = lr_at(k, total, warmup, plan.base_lr).unwrap();
        assert_eq!(f[2].parse::<f64>().unwrap(), expected, "step {k} of stage {stage}");
        assert!(f[3..].iter().all(|v| v.parse::<f64>().unwrap().is_finite()));
    }
    assert_eq!(per_stage[1..], [6, 6, 6]);

    let stdout = ok(&[&common[..], &["eval", "--checkpoint", p(&out.join("checkpoints/stage3.json")), "--heatmaps"]].concat());
    assert!(stdout.starts_with("split,n_images,i_auroc,p_auroc,accuracy\ntest,12,"));
    let csv = std::fs::read_to_string(out.join("reports/metrics_test.csv")).unwrap();
    assert_eq!(csv, stdout.lines().take(2).map(|l| format!("{l}\n")).collect::<String>());
    let json: Value = serde_json::from_slice(&std::fs::read(out.join("reports/metrics_test.json")).unwrap()).unwrap();
    assert_eq!(json["n_images"], 12);
    assert_eq!(std::fs::read_dir(out.join("heatmaps/test")).unwrap().count(), 12);

    // Ground-truth maps score perfectly.
    ok(&[&common[..], &["eval", "--checkpoint", p(&out.join("checkpoints/stage3.json")), "--oracle-maps"]].concat());
    let json: Value = serde_json::from_slice(&std::fs::read(out.join("reports/metrics_test.json")).unwrap()).unwrap();
    assert_eq!(json["i_auroc"], 1.0);
    assert_eq!(json["p_auroc"], 1.0);

    // Resuming must continue the stage order.
    let stage1 = out.join("checkpoints/stage1.json");
    let e = err(&[&common[..], &["train", "--resume", p(&stage1), "--stages", "3"]].concat());
    assert_eq!(e["error"], "usage");
    assert!(e["message"].as_str().unwrap().contains("stage order"));
    let e = err(&[&common[..], &["--seed", "6", "train", "--resume", p(&stage1)]].concat());
    assert!(e["message"].as_str().unwrap().contains("seed"));

    // Resuming after stage 1 reproduces the uninterrupted run.
    let resumed = d.path().join("resumed");
    ok(&["--config", p(&cfg), "--out", p(&resumed), "train", "--dataset", p(&out), "--resume", p(&stage1)]);
    for s in [2, 3] {
        for ext in ["json", "f64"] {
            let name = format!("checkpoints/stage{s}.{ext}");
            assert_eq!(std::fs::read(out.join(&name)).unwrap(), std::fs::read(resumed.join(&name)).unwrap(), "{name}");
        }
    }

    // The trained checkpoint drives the map command too.
    let img = out.join("test/img_00001.pgm");
    let stdout = ok(&[&common[..], &["map", "--image", p(&img), "--checkpoint", p(&out.join("checkpoints/stage3.json"))]].concat());
    assert!(stdout.starts_with("image score "));
    assert!(stdout.contains("answer: "));
    assert!(out.join("maps/img_00001.pgm").is_file());
}

#[test]
fn training_twice_gives_identical_outputs() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path(), 1);
    let data = d.path().join("data");
    ok(&["--config", p(&cfg), "--out", p(&data), "forge"]);
    let mut trees = Vec::new();
    for (name, threads) in [("a", "1"), ("b", "3")] {
        let out = d.path().join(name);
        let status = bin()
            .env("ANOMALY_FORGE_THREADS", threads)
            .args(["--config", p(&cfg), "--out", p(&out), "train", "--dataset", p(&data)])
            .status()
            .unwrap();
        assert!(status.success());
        trees.push(read_tree(&out));
    }
    assert_eq!(trees[0], trees[1]);
}

#[test]
fn bank_image_maps_to_near_zero() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    ok(&["--seed", "3", "--out", p(&data), "forge", "--n-train", "4", "--n-test", "2"]);
    let refs = d.path().join("refs");
    std::fs::create_dir(&refs).unwrap();
    std::fs::copy(data.join("train/img_00000.pgm"), refs.join("ref.pgm")).unwrap();
    let stdout = ok(&["--seed", "3", "--out", p(d.path()), "bank", "--k", "1", "--normals", p(&refs)]);
    assert!(stdout.contains("k=1 from 1 normals"));
    let bank = d.path().join("bank/bank_k1.json");
    assert!(bank.is_file());
    let stdout = ok(&["--out", p(d.path()), "map", "--image", p(&refs.join("ref.pgm")), "--bank", p(&bank)]);
    let score: f64 = stdout.lines().next().unwrap().trim_start_matches("image score ").parse().unwrap();
    assert!(score <= 0.05, "score {score}");

    // A split directory contributes only its normal images.
    let stdout = ok(&["--seed", "3", "--out", p(d.path()), "bank", "--k", "2", "--normals", p(&data.join("train"))]);
    assert!(stdout.contains("k=2 from 2 normals"));
    let e = err(&["--seed", "3", "--out", p(d.path()), "bank", "--k", "3", "--normals", p(&data.join("train"))]);
    assert_eq!(e["error"], "input");
}

#[test]
fn map_needs_exactly_one_source() {
    let e = err(&["map", "--image", "x.pgm"]);
    assert_eq!(e["error"], "usage");
    let e = err(&["map", "--image", "x.pgm", "--bank", "b.json", "--checkpoint", "c.json"]);
    assert_eq!(e["error"], "usage");
}

#[test]
fn prompt_banks_are_validated() {
    assert!(ok(&["prompts"]).starts_with("valid\n"));
    let d = tempfile::tempdir().unwrap();
    let bad = d.path().join("bank.json");
    std::fs::write(&bad, r#"{"version": 1, "classes": [{"name": "x", "colour": 3}]}"#).unwrap();
    let e = err(&["prompts", p(&bad)]);
    assert!(e["message"].as_str().unwrap().contains("bank.json"));
}

#[test]
fn print_config_reflects_flags() {
    let stdout = ok(&["--seed", "42", "--out", "elsewhere", "--print-config", "train", "--epochs", "3"]);
    let v: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["seed"], 42);
    assert_eq!(v["out"], "elsewhere");
    assert_eq!(v["train"]["epochs"], 3);
    let e = err(&["--config", "/nonexistent/config.json", "prompts"]);
    assert_eq!(e["error"], "io");
}

#[test]
fn thread_cap_must_be_positive() {
    let out = bin().env("ANOMALY_FORGE_THREADS", "0").arg("prompts").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}
