//! End-to-end runs of the `influence` binary.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use influence::evaluation::retrain_without;
use influence::io::{load_checkpoint, read_scores, save_checkpoint, DATA_DIR_ENV};
use influence::model;
use influence::Dataset;
use serde_json::Value;
use support::fixtures::{convex_benchmark, convex_train_config, kronecker_fixture};

fn influence(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_influence"))
        .current_dir(dir)
        .env_remove(DATA_DIR_ENV)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = influence(dir, args);
    assert!(
        out.status.success(),
        "`{}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    influence(dir, args).status.code().unwrap()
}

fn write_csv(path: &Path, data: &Dataset) {
    let mut text = (0..data.dim()).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",");
    text.push_str(",label\n");
    for z in data.iter() {
        let xs: Vec<String> = z.features.iter().map(|x| format!("{x:?}")).collect();
        text.push_str(&format!("{},{}\n", xs.join(","), z.label));
    }
    fs::write(path, text).unwrap();
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

const BLOBS: &str = r#"
[data]
train = { kind = "synthetic", generator = "gaussian_blobs", n = 40, dim = 3, classes = 2, seed = 1 }
test = { kind = "synthetic", generator = "gaussian_blobs", n = 10, dim = 3, classes = 2, seed = 2 }

[model]
layer_dims = [3, 4, 2]
activation = "relu"

[training]
learning_rate = 0.2
epochs = 15
batch_size = 8
seed = 0
l2_penalty = 0.01

[solver]
kind = "ekfac"
damping = 0.01

[experiment]
top_k = 40
test_indices = [1, 3]
lds = { subsets = 2, alpha = 0.5, seed = 0, test_samples = 3 }
"#;

fn blob_dir() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.toml"), BLOBS).unwrap();
    tmp
}

#[test]
fn training_is_reproducible_and_feeds_attribution() {
    let tmp = blob_dir();
    let dir = tmp.path();
    ok(dir, &["train", "--config", "run.toml", "--out", "a"]);
    ok(dir, &["train", "--config", "run.toml", "--out", "b"]);
    assert_eq!(
        fs::read(dir.join("a/model.ckpt")).unwrap(),
        fs::read(dir.join("b/model.ckpt")).unwrap()
    );
    assert_eq!(manifest(&dir.join("a"))["outputs"], manifest(&dir.join("b"))["outputs"]);

    // top_k equals n, so every training example is listed on both sides.
    ok(dir, &["attribute", "--config", "run.toml", "--checkpoint", "a/model.ckpt", "--out", "attr"]);
    let scores = read_scores(&dir.join("attr/scores.jsonl")).unwrap();
    assert_eq!(scores.len(), 2 * 40);
    assert!(scores.iter().all(|r| r.solver == "ekfac" && r.damping == 0.01));
    let top = fs::read_to_string(dir.join("attr/top_k.csv")).unwrap();
    assert_eq!(top.lines().count(), 1 + 2 * 2 * 40);
    assert_eq!(top.lines().filter(|l| l.starts_with("3,positive,")).count(), 40);
}

#[test]
fn usage_and_data_errors_have_their_exit_codes() {
    let tmp = blob_dir();
    let dir = tmp.path();
    assert_eq!(code(dir, &["train", "--config", "missing.toml", "--out", "o"]), 1);
    fs::write(dir.join("bad.toml"), "[model]\nlayer_dims = [3, 2]\n").unwrap();
    assert_eq!(code(dir, &["train", "--config", "bad.toml", "--out", "o"]), 1);
    assert_eq!(code(dir, &["frobnicate"]), 1);
    ok(dir, &["train", "--config", "run.toml", "--out", "m"]);
    let base = ["--config", "run.toml", "--checkpoint", "m/model.ckpt", "--out", "o"];
    let with = |cmd: &str, extra: &[&str]| {
        let mut v = vec![cmd];
        v.extend(base);
        v.extend(extra);
        v.into_iter().map(String::from).collect::<Vec<_>>()
    };
    let run = |args: Vec<String>| code(dir, &args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(run(with("attribute", &["--solver", "newton"])), 1);
    assert_eq!(run(with("attribute", &["--damping", "0"])), 1);
    assert_eq!(run(with("attribute", &["--test-indices", "99"])), 2);
    assert_eq!(run(with("detect", &["--budgets", "0.5,1.5"])), 1);
    fs::write(dir.join("empty.txt"), "\n# nothing\n").unwrap();
    assert_eq!(run(with("unlearn", &["--forget", "empty.txt", "--mode", "remove"])), 2);
    fs::write(dir.join("same.txt"), "0,0\n").unwrap();
    let out = influence(dir, &["train", "--config", "run.toml", "--out", "m2"]);
    assert!(out.status.success());
    // Example 0 of the blobs has label 0, so this "repair" changes nothing.
    assert_eq!(run(with("unlearn", &["--forget", "same.txt", "--mode", "relabel"])), 2);
    assert!(!dir.join("o").exists(), "failed commands must not write outputs");
}

#[test]
fn exact_and_ekfac_agree_on_a_kronecker_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let (params, data) = kronecker_fixture(1e-3);
    write_csv(&dir.join("train.csv"), &data);
    save_checkpoint(&dir.join("k.ckpt"), &params, Value::Null).unwrap();
    fs::write(
        dir.join("run.toml"),
        r#"
[data]
train = { kind = "delimited", path = "train.csv", label_column = "label", classes = 3 }
test = { kind = "delimited", path = "train.csv", label_column = "label", classes = 3 }

[model]
layer_dims = [4, 3]
activation = "relu"

[solver]
kind = "ekfac"
damping = 0.01
expected_labels = true

[experiment]
top_k = 1
"#,
    )
    .unwrap();
    let common = ["--config", "run.toml", "--checkpoint", "k.ckpt"];
    ok(dir, &[&["attribute"][..], &common, &["--out", "ek"]].concat());
    ok(dir, &[&["attribute"][..], &common, &["--solver", "exact", "--out", "ex"]].concat());
    let top = |run: &str| -> Vec<String> {
        fs::read_to_string(dir.join(run).join("top_k.csv"))
            .unwrap()
            .lines()
            .filter(|l| l.contains(",positive,"))
            .map(|l| l.split(',').nth(3).unwrap().to_string())
            .collect()
    };
    assert_eq!(top("ek").len(), 30);
    assert_eq!(top("ek"), top("ex"));
}

#[test]
fn lds_resumes_from_completed_subsets() {
    let tmp = blob_dir();
    let dir = tmp.path();
    let first = ok(dir, &["lds", "--config", "run.toml", "--out", "l", "--solver", "exact,ekfac"]);
    assert!(first.contains("0 reused, 2 run"), "{first}");
    let summary = fs::read_to_string(dir.join("l/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    assert!(summary.lines().nth(3).unwrap().starts_with("random,"));
    let before = manifest(&dir.join("l"))["outputs"].clone();
    let second = ok(dir, &["lds", "--config", "run.toml", "--out", "l", "--solver", "exact,ekfac"]);
    assert!(second.contains("2 reused, 0 run"), "{second}");
    assert_eq!(manifest(&dir.join("l"))["outputs"], before);
    // A different subset count keys different retrains.
    let third = ok(dir, &["lds", "--config", "run.toml", "--out", "l", "--subsets", "3"]);
    assert!(third.contains("2 reused, 1 run"), "{third}");
}

#[test]
fn removal_moves_toward_the_retrained_model() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let (spec, train, test) = convex_benchmark(200);
    write_csv(&dir.join("train.csv"), &train);
    write_csv(&dir.join("test.csv"), &test);
    fs::write(
        dir.join("run.toml"),
        r#"
[data]
train = { kind = "delimited", path = "train.csv", label_column = "label" }
test = { kind = "delimited", path = "test.csv", label_column = "label" }

[model]
layer_dims = [10, 2]
activation = "relu"

[training]
learning_rate = 1.0
epochs = 50000
batch_size = 1000
seed = 0
l2_penalty = 0.01
tolerance = 1e-12

[solver]
kind = "exact"
damping = 1e-10
"#,
    )
    .unwrap();
    ok(dir, &["train", "--config", "run.toml", "--out", "t"]);
    fs::write(dir.join("forget.txt"), "7\n").unwrap();
    ok(
        dir,
        &["unlearn", "--config", "run.toml", "--checkpoint", "t/model.ckpt", "--forget", "forget.txt", "--mode", "remove", "--out", "u"],
    );
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.join("u/unlearn.json")).unwrap()).unwrap();
    assert!(report["held_out_loss_before"].is_f64() && report["held_out_loss_after"].is_f64());
    assert_eq!(report["forgotten"][0]["index"], 7);

    let (before, _) = load_checkpoint(&dir.join("t/model.ckpt")).unwrap();
    let (after, meta) = load_checkpoint(&dir.join("u/model.ckpt")).unwrap();
    assert_eq!(meta["unlearning"]["solver"], "exact");
    let retrained = retrain_without(&spec, &train, 7, &convex_train_config(0.01)).unwrap();
    let gap_before = (before.theta() - retrained.theta()).norm();
    let gap_after = (after.theta() - retrained.theta()).norm();
    assert!(gap_after < 0.5 * gap_before, "{gap_after} vs {gap_before}");
    assert!(model::mean_data_loss(&after, &test).unwrap().is_finite());
}

#[test]
fn replay_reproduces_outputs_and_rejects_changed_inputs() {
    let tmp = blob_dir();
    let dir = tmp.path();
    ok(dir, &["--jobs", "1", "train", "--config", "run.toml", "--out", "t"]);
    ok(dir, &["detect", "--config", "run.toml", "--checkpoint", "t/model.ckpt", "--out", "d", "--solver", "lissa"]);
    let out = ok(dir, &["--jobs", "2", "replay", "--manifest", "d/manifest.json", "--out", "r"]);
    assert!(out.contains("bit-identical"), "{out}");
    // Outputs never mention where they were written.
    for entry in fs::read_dir(dir.join("r")).unwrap() {
        let path = entry.unwrap().path();
        if path.file_name().unwrap() != "manifest.json" {
            let bytes = fs::read(&path).unwrap();
            assert!(!String::from_utf8_lossy(&bytes).contains(dir.join("r").to_str().unwrap()));
        }
    }
    fs::write(dir.join("run.toml"), BLOBS.replace("epochs = 15", "epochs = 16")).unwrap();
    assert_eq!(code(dir, &["replay", "--manifest", "d/manifest.json", "--out", "r2"]), 2);
}

#[test]
fn data_directory_variable_resolves_relative_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data_dir = dir.join("data");
    fs::create_dir(&data_dir).unwrap();
    let (_, train, _) = convex_benchmark(30);
    write_csv(&data_dir.join("train.csv"), &train);
    fs::write(
        dir.join("run.toml"),
        "[data]\ntrain = { kind = \"delimited\", path = \"train.csv\", label_column = \"label\" }\n\n[model]\nlayer_dims = [10, 2]\nactivation = \"relu\"\n",
    )
    .unwrap();
    assert_eq!(code(dir, &["train", "--config", "run.toml", "--out", "t"]), 2);
    let out = Command::new(env!("CARGO_BIN_EXE_influence"))
        .current_dir(dir)
        .env(DATA_DIR_ENV, &data_dir)
        .args(["train", "--config", "run.toml", "--out", "t"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(manifest(&dir.join("t"))["data_dir"], data_dir.to_str().unwrap());
}

#[test]
fn detection_reports_recall_against_a_flip_map() {
    let tmp = blob_dir();
    let dir = tmp.path();
    let config = BLOBS.replace("top_k = 40", "top_k = 40\ncorruption = { fraction = 0.2, seed = 1 }");
    fs::write(dir.join("noisy.toml"), config).unwrap();
    ok(dir, &["train", "--config", "noisy.toml", "--out", "t"]);
    ok(dir, &["corrupt", "--config", "noisy.toml", "--out", "c"]);
    let flips: Value = serde_json::from_str(&fs::read_to_string(dir.join("c/corruption.json")).unwrap()).unwrap();
    assert_eq!(flips["flips"].as_array().unwrap().len(), 8);
    ok(
        dir,
        &["detect", "--config", "noisy.toml", "--checkpoint", "t/model.ckpt", "--flips", "c/corruption.json", "--budgets", "0.2,1", "--out", "d"],
    );
    let curve = fs::read_to_string(dir.join("d/detection.csv")).unwrap();
    let last = curve.lines().last().unwrap();
    assert_eq!(last, "1.0,40,1.0,1.0");
    // The flip map must describe the labels actually loaded.
    assert_eq!(
        code(dir, &["detect", "--config", "run.toml", "--checkpoint", "t/model.ckpt", "--flips", "c/corruption.json", "--out", "d2"]),
        2
    );
}
