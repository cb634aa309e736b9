#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{bright_dark, write_fixture};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn gcec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcec"))
        .args(args)
        .env_remove("GCEC_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// 3×3 bright/dark container with two classes.
fn synthetic(dir: &Path, n: usize) {
    let (images, labels) = bright_dark(&mut ChaCha8Rng::seed_from_u64(n as u64), n);
    write_fixture(dir, &images, &labels, &["dark", "bright"], (3, 3, 1));
}

fn train_small(dir: &Path) -> (std::path::PathBuf, Output) {
    let data = dir.join("data");
    synthetic(&data, 120);
    let model = dir.join("model.gcec");
    let out = gcec(&[
        "train",
        "--data",
        p(&data),
        "--out-model",
        p(&model),
        "--out-metrics",
        p(&dir.join("metrics.jsonl")),
        "--epochs",
        "1",
        "--seed",
        "3",
    ]);
    (model, out)
}

fn help_flags(sub: &str) -> BTreeSet<String> {
    let help = stdout(&gcec(&[sub, "--help"]));
    help.split_whitespace()
        .filter_map(|w| w.strip_prefix("--"))
        .map(|w| w.trim_end_matches(|c: char| !c.is_ascii_alphanumeric()).to_string())
        .filter(|w| !w.is_empty())
        .collect()
}

#[test]
fn help_lists_every_documented_flag() {
    let flags = help_flags("train");
    for f in [
        "data",
        "out-model",
        "out-metrics",
        "config",
        "seed",
        "epochs",
        "batch-size",
        "lr",
        "weight-decay",
        "connectivity",
        "hops",
        "detach-edge-weights",
        "classes",
        "threads",
    ] {
        assert!(flags.contains(f), "--{f} missing from help");
    }
    assert!(stdout(&gcec(&["train", "--help"])).contains("GCEC_SEED"));
}

#[test]
fn config_keys_and_flags_are_bijective() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let flags: BTreeSet<String> = help_flags("train").into_iter().filter(|f| f != "help" && f != "config").collect();
    for flag in &flags {
        fs::write(&cfg, format!("{flag} = 1\n")).unwrap();
        let out = gcec(&["params", "--config", p(&cfg)]);
        assert!(!stderr(&out).contains("unknown config key"), "--{flag} not accepted as a key");
    }
    for key in ["bogus", "learning-rate", "help"] {
        fs::write(&cfg, format!("{key} = 1\n")).unwrap();
        let out = gcec(&["params", "--config", p(&cfg)]);
        assert_eq!(out.status.code(), Some(1));
        assert!(stderr(&out).contains("unknown config key"), "{key}");
    }
}

#[test]
fn unknown_flag_exits_1_naming_it() {
    let out = gcec(&["train", "--frobnicate", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--frobnicate"));
}

#[test]
fn missing_container_exits_2_naming_the_path() {
    let out = gcec(&["train", "--data", "/nonexistent/container-dir"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/nonexistent/container-dir"));
}

fn params_total(classes: &str) -> (usize, usize) {
    let out = gcec(&["params", "--classes", classes]);
    assert!(out.status.success());
    let text = stdout(&out);
    let mut rows = 0;
    let mut total = 0;
    for line in text.lines().skip(1) {
        let count: usize = line.split_whitespace().last().unwrap().parse().unwrap();
        if line.starts_with("total") {
            total = count;
        } else {
            rows += count;
        }
    }
    (rows, total)
}

#[test]
fn params_reports_default_budgets() {
    assert_eq!(params_total("6"), (39_023, 39_023));
    assert_eq!(params_total("10"), (64_115, 64_115));
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let (model, out) = train_small(dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("test  loss"));
    assert!(model.exists() && dir.path().join("model.gcec.json").exists());

    let metrics = fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    let records: Vec<Value> = metrics.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let splits: Vec<&str> = records.iter().map(|r| r["split"].as_str().unwrap()).collect();
    assert_eq!(splits, ["val", "train", "val", "test"]);
    for key in ["epoch", "split", "loss", "acc", "auc_per_class", "auc_macro", "wall_ms"] {
        assert!(records.iter().all(|r| r.get(key).is_some()), "{key}");
    }

    let data = dir.path().join("data");
    let eval = || gcec(&["eval", "--model", p(&model), "--data", p(&data)]);
    let (a, b) = (eval(), eval());
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    let acc = v["acc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(v["auc_per_class"].as_array().unwrap().len(), 2);
    assert_eq!(v["per_class_recall"].as_array().unwrap().len(), 2);
    let cm = v["confusion_matrix"].as_array().unwrap();
    let total: u64 = cm.iter().flat_map(|r| r.as_array().unwrap()).map(|x| x.as_u64().unwrap()).sum();
    assert_eq!(total, 120);
    assert!(v.get("auc_macro").is_some());
}

#[test]
fn eval_rejects_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let (model, out) = train_small(dir.path());
    assert!(out.status.success());

    let three = dir.path().join("three");
    let labels: Vec<u8> = (0..30).map(|k| (k % 3) as u8).collect();
    write_fixture(&three, &[7; 30 * 9], &labels, &["a", "b", "c"], (3, 3, 1));
    let out = gcec(&["eval", "--model", p(&model), "--data", p(&three)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("3 classes, model expects 2"), "{}", stderr(&out));

    let data = dir.path().join("data");
    let out = gcec(&["eval", "--model", p(&model), "--data", p(&data), "--classes", "5", "--hops", "1"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("mismatch") && err.contains("n_classes: 2 vs 5") && err.contains("edge_conv_hops: 2 vs 1"), "{err}");
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synthetic(&data, 60);
    let cfg = dir.path().join("run.cfg");
    let metrics = dir.path().join("m.jsonl");
    fs::write(&cfg, format!("# small run\ndata = {}\nepochs = 3\nbatch_size = 16\nout-metrics = {}\n", p(&data), p(&metrics))).unwrap();
    let out = gcec(&["train", "--config", p(&cfg), "--epochs", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let last: Value = serde_json::from_str(fs::read_to_string(&metrics).unwrap().lines().last().unwrap()).unwrap();
    assert_eq!(last["epoch"], 1);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synthetic(&data, 60);
    let run = |env: Option<&str>, flag: Option<&str>, name: &str| {
        let metrics = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_gcec"));
        cmd.args(["train", "--data", p(&data), "--epochs", "1", "--out-metrics", p(&metrics)]);
        cmd.env_remove("GCEC_SEED");
        if let Some(s) = env {
            cmd.env("GCEC_SEED", s);
        }
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        assert!(cmd.output().unwrap().status.success());
        fs::read(metrics).unwrap()
    };
    assert_eq!(run(Some("11"), None, "a"), run(None, Some("11"), "b"));
    assert_eq!(run(Some("5"), Some("11"), "c"), run(None, Some("11"), "d"));
    assert_ne!(run(None, Some("12"), "e"), run(None, Some("11"), "f"));
}

#[test]
fn inspect_constant_image_concentrates_edge_weights() {
    let out = gcec(&["inspect", "--constant-image", "128", "--height", "5", "--width", "5", "--classes", "2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let counts: Vec<u64> = v["edge_weights"]["counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).collect();
    assert_eq!(counts.iter().sum::<u64>(), 40);
    assert_eq!(counts.iter().filter(|&&c| c > 0).count(), 1);
    assert_eq!(v["edge_weight_min"], v["edge_weight_max"]);
    let layers = v["layers"].as_array().unwrap();
    assert_eq!(layers.len(), 5);
    assert_eq!(layers[0]["mean_pairwise_distance"], 0.0);
    assert_eq!(v["oversmoothing_probe"].as_array().unwrap().len(), 9);
}

#[test]
fn inspect_reads_a_container_sample() {
    let dir = tempfile::tempdir().unwrap();
    let (model, out) = train_small(dir.path());
    assert!(out.status.success());
    let data = dir.path().join("data");
    let out = gcec(&["inspect", "--model", p(&model), "--data", p(&data), "--sample", "4"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["logits"].as_array().unwrap().len(), 2);
    let out = gcec(&["inspect", "--model", p(&model), "--data", p(&data), "--sample", "500"]);
    assert_eq!(out.status.code(), Some(1));
}
