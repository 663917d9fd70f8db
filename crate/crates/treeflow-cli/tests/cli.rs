//! End-to-end tests of the `treeflow` binary: artifact layout, determinism
//! across reruns, format round-trips, and the exit-code contract
//! (1 usage, 2 data, 3 runtime, 4 threshold).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

use treeflow::tree::TreeState;
use treeflow_cli::dataio::load_csv;
use treeflow_cli::formats::{read_checkpoint, read_ensemble, tree_from_json, tree_to_json};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_treeflow")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn treeflow")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf8 stderr")
}

/// Small hidden-XOR run that trains in about a second.
fn tiny_config(output_dir: &str) -> String {
    format!(
        r#"{{
  "dataset": {{ "kind": "xor", "n": 120, "num_noise": 1, "noise": "binary", "seed": 3 }},
  "train_fraction": 0.8,
  "seeds": [1],
  "d_max": 2,
  "num_thresholds": 1,
  "hidden_layers": 1,
  "hidden_units": 16,
  "steps": 40,
  "ensemble_size": 50,
  "output_dir": "{output_dir}"
}}"#
    )
}

fn write_config(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, contents).expect("write config");
    path
}

fn train_tiny(dir: &Path) -> PathBuf {
    let config = write_config(dir, "run.json", &tiny_config("out"));
    let out = run_in(dir, &["train", "--config", config.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "train failed: {}", stderr(&out));
    dir.join("out").join("run-1")
}

fn json_file(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).expect("read json")).expect("parse json")
}

#[test]
fn count_space_prints_exact_counts_and_truncated_scientific() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), &["count-space", "10", "4"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for expected in [
        "10", "1000", "5329000", "56098964644840",
        "1.000 x 10^1", "1.000 x 10^3", "5.329 x 10^6", "5.609 x 10^13",
    ] {
        assert!(text.contains(expected), "missing {expected:?} in:\n{text}");
    }

    let out = run_in(dir.path(), &["count-space", "20", "4"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    // 941192000 rounds to 9.412 x 10^8; the printed form truncates.
    for expected in [
        "20", "8000", "941192000", "8358052689638953280",
        "2.000 x 10^1", "8.000 x 10^3", "9.411 x 10^8", "8.358 x 10^18",
    ] {
        assert!(text.contains(expected), "missing {expected:?} in:\n{text}");
    }
}

#[test]
fn count_space_rejects_fewer_features_than_depth() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), &["count-space", "2", "10"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("usage"));
}

#[test]
fn help_exits_zero_and_parse_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run_in(dir.path(), &["--help"])), 0);
    assert_eq!(code(&run_in(dir.path(), &["eval", "--help"])), 0);
    assert_eq!(code(&run_in(dir.path(), &["no-such-command"])), 1);
    assert_eq!(code(&run_in(dir.path(), &["count-space", "ten", "4"])), 1);
}

#[test]
fn generated_xor_csv_round_trips_exactly() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("xor.csv");
    let out = run_in(
        dir.path(),
        &["xor", "--n", "150", "--num-noise", "3", "--noise", "binary", "--seed", "11",
          "--out", csv.to_str().unwrap()],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    // Binary columns are fixed points of min-max scaling, so the loaded
    // dataset must equal the generated one value for value.
    let generated = treeflow::data::gen_hidden_xor(150, 3, treeflow::data::NoiseKind::Binary, 11)
        .expect("generate");
    let loaded = load_csv(&csv, "label", &[], true).expect("load");
    assert_eq!(loaded.num_rows(), generated.num_rows());
    assert_eq!(loaded.num_features(), generated.num_features());
    assert_eq!(loaded.num_classes(), generated.num_classes());
    assert_eq!(loaded.feature_names(), generated.feature_names());
    assert_eq!(loaded.labels(), generated.labels());
    for r in 0..generated.num_rows() {
        for f in 0..generated.num_features() {
            assert_eq!(loaded.value(r, f), generated.value(r, f), "row {r} feature {f}");
        }
    }
}

#[test]
fn xor_rejects_tiny_n() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("xor.csv");
    let out = run_in(dir.path(), &["xor", "--n", "3", "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(!csv.exists());
}

#[test]
fn train_artifacts_are_deterministic_and_restorable() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "run.json", &tiny_config("ignored"));

    // Same config through two different output roots: an explicit --out and
    // the output-root environment variable.
    let out_a = dir.path().join("a");
    let run = Command::new(bin())
        .args(["train", "--config", config.to_str().unwrap(), "--out", out_a.to_str().unwrap()])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&run), 0, "{}", stderr(&run));

    let run = Command::new(bin())
        .args(["train", "--config", config.to_str().unwrap()])
        .env(treeflow_cli::config::OUT_ROOT_ENV, dir.path().join("b"))
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let run_a = out_a.join("run-1");
    let run_b = dir.path().join("b").join("ignored").join("run-1");

    for name in ["config.json", "checkpoint.json", "metrics.csv", "report.json"] {
        let a = fs::read(run_a.join(name)).unwrap_or_else(|_| panic!("missing {name}"));
        let b = fs::read(run_b.join(name)).unwrap_or_else(|_| panic!("missing {name}"));
        assert_eq!(a, b, "{name} differs between identical runs");
    }

    let report = json_file(&run_a.join("report.json"));
    let hash = report["config_hash"].as_str().expect("hash");
    let metrics = fs::read_to_string(run_a.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some(format!("# config_hash={hash}").as_str()));
    assert_eq!(lines.next(), Some("step,mean_loss,log_z,epsilon,buffer_min,buffer_max"));
    assert_eq!(lines.count(), report["steps"].as_u64().unwrap() as usize);

    // The stored parameter vector restores to the exact same model.
    let ck = read_checkpoint(&run_a.join("checkpoint.json")).expect("checkpoint");
    assert_eq!(ck.config_hash, hash);
    let model = ck.restore_model().expect("restore");
    assert_eq!(model.flatten_params(), ck.params);
}

#[test]
fn eval_writes_reports_and_round_trippable_ensembles() {
    let dir = TempDir::new().unwrap();
    let run_dir = train_tiny(dir.path());
    let checkpoint = run_dir.join("checkpoint.json");
    let test_rows = json_file(&run_dir.join("report.json"))["test_rows"].as_u64().unwrap();

    let out = run_in(
        dir.path(),
        &["eval", "--config", "run.json", "--checkpoint", checkpoint.to_str().unwrap(),
          "--samples", "60"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json_file(&run_dir.join("eval-single").join("report.json"));
    assert_eq!(report["mode"], "single");
    assert_eq!(report["test_set"], "id");
    let acc = report["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc), "accuracy {acc}");
    let predictions = fs::read_to_string(run_dir.join("eval-single").join("predictions.csv")).unwrap();
    assert_eq!(predictions.lines().count() as u64, test_rows + 1);
    assert!(predictions.starts_with("row_id,predicted_class,p_0"));

    let out = run_in(
        dir.path(),
        &["eval", "--config", "run.json", "--checkpoint", checkpoint.to_str().unwrap(),
          "--mode", "ensemble", "--samples", "60"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let entries = read_ensemble(&run_dir.join("eval-ensemble").join("ensemble.json")).expect("read");
    assert!(!entries.is_empty());
    for entry in &entries {
        let tree: TreeState = tree_from_json(&entry.tree).expect("tree");
        let back = tree_to_json(&tree, entry.tree.num_thresholds);
        assert_eq!(
            serde_json::to_value(&back).unwrap(),
            serde_json::to_value(&entry.tree).unwrap()
        );
        assert!(entry.log_posterior.is_finite());
    }
}

#[test]
fn eval_rejects_mismatched_config() {
    let dir = TempDir::new().unwrap();
    let run_dir = train_tiny(dir.path());
    // Any semantic change to the config invalidates the recorded hash.
    let edited = tiny_config("out").replace("\"steps\": 40", "\"steps\": 41");
    write_config(dir.path(), "edited.json", &edited);
    let out = run_in(
        dir.path(),
        &["eval", "--config", "edited.json", "--checkpoint",
          run_dir.join("checkpoint.json").to_str().unwrap()],
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("hash"), "{}", stderr(&out));
}

#[test]
fn eval_rejects_missing_checkpoint() {
    let dir = TempDir::new().unwrap();
    write_config(dir.path(), "run.json", &tiny_config("out"));
    let out = run_in(
        dir.path(),
        &["eval", "--config", "run.json", "--checkpoint", "nowhere/checkpoint.json"],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn eval_rejects_ood_without_shift() {
    let dir = TempDir::new().unwrap();
    let run_dir = train_tiny(dir.path());
    let out = run_in(
        dir.path(),
        &["eval", "--config", "run.json", "--checkpoint",
          run_dir.join("checkpoint.json").to_str().unwrap(), "--test-set", "ood"],
    );
    assert_eq!(code(&out), 1);
}

#[test]
fn unknown_config_key_fails_before_any_output() {
    let dir = TempDir::new().unwrap();
    let bad = tiny_config("out").replace("\"steps\": 40", "\"stepz\": 40");
    write_config(dir.path(), "bad.json", &bad);
    let out = run_in(dir.path(), &["train", "--config", "bad.json"]);
    assert_eq!(code(&out), 1);
    assert!(!dir.path().join("out").exists(), "no artifacts on a rejected config");
}

#[test]
fn shift_config_trains_and_evaluates_out_of_distribution() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("xor.csv");
    let out = run_in(
        dir.path(),
        &["xor", "--n", "160", "--num-noise", "2", "--noise", "binary", "--seed", "5",
          "--out", csv.to_str().unwrap()],
    );
    assert_eq!(code(&out), 0);

    // Hold out every row with noise_0 = 1 as the shifted test set.
    let config = format!(
        r#"{{
  "dataset": {{ "kind": "csv", "path": "{}", "label_column": "label" }},
  "shift": {{ "feature": "noise_0", "threshold": 0.5, "id_test_fraction": 0.25 }},
  "seeds": [5],
  "d_max": 2,
  "num_thresholds": 1,
  "hidden_layers": 1,
  "hidden_units": 16,
  "steps": 40,
  "output_dir": "out"
}}"#,
        csv.display()
    );
    write_config(dir.path(), "shift.json", &config);
    let out = run_in(dir.path(), &["train", "--config", "shift.json", "--seeds", "5"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let run_dir = dir.path().join("out").join("run-5");

    let out = run_in(
        dir.path(),
        &["eval", "--config", "shift.json", "--checkpoint",
          run_dir.join("checkpoint.json").to_str().unwrap(),
          "--test-set", "ood", "--samples", "60", "--out", "ood-eval"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json_file(&dir.path().join("ood-eval").join("report.json"));
    assert_eq!(report["test_set"], "ood");
    assert!(report["accuracy"].as_f64().unwrap().is_finite());
}

#[test]
fn categorical_columns_expand_to_indicators() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("mixed.csv");
    fs::write(
        &csv,
        "size,color,weight,grade\n\
         1.0,red,10.0,a\n\
         2.0,blue,20.0,b\n\
         3.0,red,30.0,a\n\
         4.0,green,40.0,b\n",
    )
    .unwrap();
    let dataset = load_csv(&csv, "grade", &["color".to_string()], false).expect("load");
    assert_eq!(
        dataset.feature_names(),
        &["size", "color=blue", "color=green", "color=red", "weight"]
    );
    assert_eq!(dataset.num_classes(), 2);
    // Row 1 is blue: indicator 1 in the blue column, 0 elsewhere.
    assert_eq!(dataset.value(1, 1), 1.0);
    assert_eq!(dataset.value(1, 2), 0.0);
    assert_eq!(dataset.value(1, 3), 0.0);
    assert_eq!(dataset.value(0, 3), 1.0);
    assert_eq!(dataset.labels(), &[0, 1, 0, 1]);

    // A categorical label column or an unknown column name is rejected.
    assert!(load_csv(&csv, "grade", &["grade".to_string()], false).is_err());
    assert!(load_csv(&csv, "grade", &["shape".to_string()], false).is_err());
}

#[test]
fn oracle_check_exit_codes_cover_pass_runtime_and_threshold() {
    let dir = TempDir::new().unwrap();
    write_config(dir.path(), "run.json", &tiny_config("unused"));

    let loose = ["oracle-check", "--config", "run.json", "--samples", "400",
        "--tv-threshold", "1.0", "--log-z-threshold", "1000", "--out", "pass"];
    let out = run_in(dir.path(), &loose);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report_path = dir.path().join("pass").join("run-1").join("report.json");
    let report = json_file(&report_path);
    assert_eq!(report["passed"], true);
    assert!(report["num_trees"].as_u64().unwrap() > 0);
    assert!(report["tv_distance"].as_f64().unwrap() <= 1.0);
    assert!(!report["top_k"].as_array().unwrap().is_empty());
    let first = fs::read(&report_path).unwrap();

    // Rerunning the identical check reproduces the report byte for byte.
    let out = run_in(dir.path(), &loose);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(&report_path).unwrap(), first);

    // Enumeration cap exceeded mid-computation.
    let out = run_in(
        dir.path(),
        &["oracle-check", "--config", "run.json", "--cap", "1", "--out", "capped"],
    );
    assert_eq!(code(&out), 3, "{}", stderr(&out));

    // Divergence over threshold still writes the report, then exits 4.
    let out = run_in(
        dir.path(),
        &["oracle-check", "--config", "run.json", "--samples", "400",
          "--tv-threshold", "0.000000000001", "--out", "fail"],
    );
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    let report = json_file(&dir.path().join("fail").join("run-1").join("report.json"));
    assert_eq!(report["passed"], false);
}
