//! End-to-end tests of the `bdpl` binary: pipeline flow, determinism,
//! error paths, and file formats.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bdpl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bdpl"))
}

fn run(args: &[&str]) -> Output {
    bdpl().args(args).output().expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Minimal fast config on a temp dir; returns (dir, config path).
fn small_config(dir: &TempDir) -> PathBuf {
    let root = dir.path();
    let config = serde_json::json!({
        "data": {
            "raw_path": root.join("raw.tsv"),
            "cache_path": root.join("cache.jsonl"),
        },
        "model": { "d": 8, "layers": 1, "k_sab": 1, "k_scb": 1, "heads": 1 },
        "train": {
            "batch_size": 16, "dropout_rate": 0.1, "n_max": 12,
            "learning_rate": 0.001, "lambda1": 0.1, "lambda2": 0.1,
            "patience": 5, "max_epochs": 2, "seed": 3
        },
        "synthetic": {
            "users": 30, "items": 12, "exam_per_purchase": [1, 3],
            "length_range": [12, 18], "chain_weights": [0.8, 0.15, 0.05],
            "chain_offsets": [1, 2, 3], "chain_seed": 5, "seed": 17
        },
        "output_dir": root.join("out"),
        "fixed_clock": true
    });
    let path = root.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn prepare_data(config: &Path) {
    assert_ok(&run(&["synth", "--config", config.to_str().unwrap()]));
    assert_ok(&run(&["preprocess", "--config", config.to_str().unwrap()]));
}

#[test]
fn full_pipeline_runs_and_produces_artifacts() {
    let dir = TempDir::new().unwrap();
    let config = small_config(&dir);
    prepare_data(&config);
    assert_ok(&run(&["train", "--config", config.to_str().unwrap()]));
    let out = run(&["evaluate", "--config", config.to_str().unwrap(), "--split", "test"]);
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("hr@10"), "{text}");

    for artifact in ["out/checkpoint.json", "out/telemetry.csv", "out/metrics_test.json", "out/config.echo.json"] {
        assert!(dir.path().join(artifact).exists(), "missing {artifact}");
    }
}

#[test]
fn preprocess_reuses_a_fresh_cache() {
    let dir = TempDir::new().unwrap();
    let config = small_config(&dir);
    assert_ok(&run(&["synth", "--config", config.to_str().unwrap()]));
    let first = run(&["preprocess", "--config", config.to_str().unwrap()]);
    assert_ok(&first);
    let second = run(&["preprocess", "--config", config.to_str().unwrap()]);
    assert_ok(&second);
    assert!(stdout(&second).contains("reusing"), "{}", stdout(&second));
    // summaries agree line for line
    let tail = |s: String| s.lines().skip(1).map(String::from).collect::<Vec<_>>().join("\n");
    assert_eq!(tail(stdout(&first)), tail(stdout(&second)));
}

#[test]
fn preprocess_summary_matches_hand_counts() {
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    // 2 users, 3 items, 4 examinations, 4 purchases, avg length 4
    let fixture = "\
u1\ta\texamination\t1
u1\tb\tpurchase\t2
u1\tc\texamination\t3
u1\ta\tpurchase\t4
u2\tb\texamination\t1
u2\ta\tpurchase\t2
u2\tc\texamination\t3
u2\tb\tpurchase\t4
";
    std::fs::write(root.join("raw.tsv"), fixture).unwrap();
    let config = serde_json::json!({
        "data": { "raw_path": root.join("raw.tsv"), "cache_path": root.join("cache.jsonl") },
        "output_dir": root.join("out")
    });
    let path = root.join("config.json");
    std::fs::write(&path, serde_json::to_string(&config).unwrap()).unwrap();
    let out = run(&["preprocess", "--config", path.to_str().unwrap()]);
    assert_ok(&out);
    let text = stdout(&out);
    let summary_line = text
        .lines()
        .find(|l| l.trim_start().starts_with('2'))
        .unwrap_or_else(|| panic!("no summary row in {text}"));
    let fields: Vec<&str> = summary_line.split_whitespace().collect();
    assert_eq!(fields, vec!["2", "3", "4", "4", "4.00"]);
}

#[test]
fn missing_input_path_fails_and_names_it() {
    let dir = TempDir::new().unwrap();
    let config = small_config(&dir);
    // no synth: raw file absent
    let out = run(&["preprocess", "--config", config.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("raw.tsv"), "{err}");
}

#[test]
fn train_without_cache_fails() {
    let dir = TempDir::new().unwrap();
    let config = small_config(&dir);
    let out = run(&["train", "--config", config.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("preprocess"));
}

#[test]
fn zero_epochs_emits_untrained_checkpoint() {
    let dir = TempDir::new().unwrap();
    let config = small_config(&dir);
    prepare_data(&config);
    let out = run(&["train", "--config", config.to_str().unwrap(), "--max-epochs", "0"]);
    assert_ok(&out);
    assert!(dir.path().join("out/checkpoint.json").exists());
    let telemetry = std::fs::read_to_string(dir.path().join("out/telemetry.csv")).unwrap();
    assert_eq!(telemetry.lines().count(), 1, "header only: {telemetry}");
}

#[test]
fn fixed_seed_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let config = small_config(&dir);
    prepare_data(&config);

    let args = ["train", "--config", config.to_str().unwrap(), "--seed", "9"];
    assert_ok(&run(&args));
    let telemetry1 = std::fs::read(dir.path().join("out/telemetry.csv")).unwrap();
    let checkpoint1 = std::fs::read(dir.path().join("out/checkpoint.json")).unwrap();
    assert_ok(&run(&args));
    let telemetry2 = std::fs::read(dir.path().join("out/telemetry.csv")).unwrap();
    let checkpoint2 = std::fs::read(dir.path().join("out/checkpoint.json")).unwrap();
    assert_eq!(telemetry1, telemetry2);
    assert_eq!(checkpoint1, checkpoint2);

    let eval_args = ["evaluate", "--config", config.to_str().unwrap(), "--split", "test"];
    assert_ok(&run(&eval_args));
    let metrics1 = std::fs::read(dir.path().join("out/metrics_test.json")).unwrap();
    assert_ok(&run(&eval_args));
    let metrics2 = std::fs::read(dir.path().join("out/metrics_test.json")).unwrap();
    assert_eq!(metrics1, metrics2);
}

#[test]
fn rerunning_from_the_echoed_config_reproduces_outputs() {
    let dir = TempDir::new().unwrap();
    let config = small_config(&dir);
    prepare_data(&config);
    assert_ok(&run(&["train", "--config", config.to_str().unwrap()]));
    let telemetry1 = std::fs::read(dir.path().join("out/telemetry.csv")).unwrap();
    let echoed = dir.path().join("out/config.echo.json");
    assert!(echoed.exists());
    assert_ok(&run(&["train", "--config", echoed.to_str().unwrap()]));
    let telemetry2 = std::fs::read(dir.path().join("out/telemetry.csv")).unwrap();
    assert_eq!(telemetry1, telemetry2);
}

#[test]
fn metrics_json_has_the_exact_key_set() {
    let dir = TempDir::new().unwrap();
    let config = small_config(&dir);
    prepare_data(&config);
    assert_ok(&run(&["train", "--config", config.to_str().unwrap()]));
    assert_ok(&run(&["evaluate", "--config", config.to_str().unwrap(), "--split", "test"]));
    let text = std::fs::read_to_string(dir.path().join("out/metrics_test.json")).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let mut keys: Vec<&str> = value.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_unstable();
    let mut expected = vec!["hr@5", "hr@10", "hr@20", "ndcg@5", "ndcg@10", "ndcg@20", "instances", "seconds"];
    expected.sort_unstable();
    assert_eq!(keys, expected);
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = TempDir::new().unwrap();
    let config = small_config(&dir);
    prepare_data(&config);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = run(&[
        "evaluate",
        "--config",
        config.to_str().unwrap(),
        "--checkpoint",
        bad.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("config.json");
    std::fs::write(&path, r#"{ "output_dir": "out", "typo_field": 1 }"#).unwrap();
    let out = run(&["preprocess", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("typo_field"));
}

#[test]
fn ablation_suite_emits_six_rows() {
    let dir = TempDir::new().unwrap();
    let config = small_config(&dir);
    prepare_data(&config);
    let out = run(&[
        "experiment",
        "--config",
        config.to_str().unwrap(),
        "--suite",
        "ablation",
        "--max-epochs",
        "1",
    ]);
    assert_ok(&out);
    let table = std::fs::read_to_string(dir.path().join("out/experiment_ablation.txt")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 6, "{table}");
    for name in ["full", "no_bge", "no_spl", "no_lpl", "no_cl_short", "no_cl_long"] {
        assert!(table.contains(name), "missing {name} in {table}");
    }
    for row in rows {
        assert!(row.contains("ok"), "{row}");
    }
}

#[test]
fn cascade_suite_compares_both_directions() {
    let dir = TempDir::new().unwrap();
    let config = small_config(&dir);
    prepare_data(&config);
    let out = run(&[
        "experiment",
        "--config",
        config.to_str().unwrap(),
        "--suite",
        "cascade",
        "--max-epochs",
        "1",
    ]);
    assert_ok(&out);
    let table = std::fs::read_to_string(dir.path().join("out/experiment_cascade.txt")).unwrap();
    assert!(table.contains("tar2aux") && table.contains("aux2tar"), "{table}");
}

/// The per-sequence graph dumps as `{relation: {node: [neighbors]}}`;
/// frozen against the hand-derived adjacency of the five-event example.
#[test]
fn graph_debug_dump_golden() {
    use bdpl_core::behavior_graph::build_subgraphs;
    use bdpl_core::data::BehaviorType::{Examination as E, Purchase as P};
    let graph = build_subgraphs(&[(1, E), (2, E), (3, P), (4, E), (5, P)]);
    let json = serde_json::to_string_pretty(&graph.dump()).unwrap();
    let golden = r#"{
  "e2e_bwd": {
    "1": [
      2
    ],
    "2": [
      4
    ]
  },
  "e2e_fwd": {
    "2": [
      1
    ],
    "4": [
      2
    ]
  },
  "e2p_bwd": {
    "1": [
      3
    ],
    "2": [
      3
    ],
    "4": [
      5
    ]
  },
  "e2p_fwd": {
    "3": [
      1,
      2
    ],
    "5": [
      4
    ]
  },
  "p2p_bwd": {
    "3": [
      5
    ]
  },
  "p2p_fwd": {
    "5": [
      3
    ]
  }
}"#;
    assert_eq!(json, golden);
}

/// Worker-parallel parsing merges chunks in file order, so the result is
/// identical to a sequential parse, and errors keep file-level line
/// numbers.
#[test]
fn parallel_parse_matches_sequential() {
    let dir = TempDir::new().unwrap();
    let config = small_config(&dir);
    assert_ok(&run(&["synth", "--config", config.to_str().unwrap()]));

    let sequential = run(&["preprocess", "--config", config.to_str().unwrap()]);
    assert_ok(&sequential);
    std::fs::remove_file(dir.path().join("cache.jsonl")).unwrap();
    let parallel = bdpl()
        .args(["preprocess", "--config", config.to_str().unwrap()])
        .env("BDPL_NUM_WORKERS", "3")
        .output()
        .unwrap();
    assert_ok(&parallel);
    let tail = |out: &Output| {
        stdout(out)
            .lines()
            .skip(1)
            .map(String::from)
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(tail(&sequential), tail(&parallel));

    // an error in a late chunk still reports its absolute line number
    let raw = dir.path().join("raw.tsv");
    let mut text = std::fs::read_to_string(&raw).unwrap();
    let lines = text.lines().count();
    text.push_str("u9\ti9\twishlist\t1\n");
    std::fs::write(&raw, text).unwrap();
    std::fs::remove_file(dir.path().join("cache.jsonl")).unwrap();
    let failed = bdpl()
        .args(["preprocess", "--config", config.to_str().unwrap()])
        .env("BDPL_NUM_WORKERS", "3")
        .output()
        .unwrap();
    assert!(!failed.status.success());
    let err = String::from_utf8_lossy(&failed.stderr);
    assert!(err.contains("wishlist") && err.contains(&format!("line {}", lines + 1)), "{err}");
}

#[test]
fn diverging_variant_is_marked_and_fails_the_suite() {
    let dir = TempDir::new().unwrap();
    let config_path = small_config(&dir);
    // push the learning rate into guaranteed divergence
    let mut config: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&config_path).unwrap()).unwrap();
    config["train"]["learning_rate"] = serde_json::json!(1e14);
    config["train"]["max_epochs"] = serde_json::json!(30);
    std::fs::write(&config_path, serde_json::to_string(&config).unwrap()).unwrap();

    prepare_data(&config_path);
    let out = run(&["experiment", "--config", config_path.to_str().unwrap(), "--suite", "cascade"]);
    assert!(!out.status.success());
    let table = std::fs::read_to_string(dir.path().join("out/experiment_cascade.txt")).unwrap();
    assert!(table.contains("FAILED"), "{table}");
}
