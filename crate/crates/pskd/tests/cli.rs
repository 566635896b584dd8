//! End-to-end command-line behaviour: run directory layout, exit codes,
//! overrides, eval consistency, analyze outputs, and sweeps.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pskd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pskd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_path(out: &Output) -> PathBuf {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    PathBuf::from(String::from_utf8_lossy(&out.stdout).trim().to_string())
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path
}

/// Minimal quick config: tiny blobs, five epochs.
const QUICK: &str = r#"{
    "method": "hard", "epochs": 5, "batch_size": 16, "hidden_dims": [8],
    "lr_decay_epochs": [3], "seed": 4,
    "dataset": {"kind": "blobs", "k": 3, "n_per_class": 20, "seed": 1}
}"#;

#[test]
fn train_writes_run_directory_with_history_rows() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), QUICK);
    let out = pskd(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("runs").to_str().unwrap(),
    ]);
    let run_dir = stdout_path(&out);

    for file in ["manifest.json", "config.json", "history.csv", "model.json", "summary.csv"] {
        assert!(run_dir.join(file).exists(), "{file} missing");
    }
    let history = fs::read_to_string(run_dir.join("history.csv")).unwrap();
    let rows: Vec<&str> = history.lines().collect();
    assert_eq!(rows[0], "epoch,alpha,lr,train_loss,val_nll,val_top1_error");
    assert_eq!(rows.len(), 6); // header + 5 epochs

    // No per-example CSV unless requested.
    assert!(!run_dir.join("per_example.csv").exists());
}

#[test]
fn alpha_override_lands_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{
            "method": "pskd", "alpha_t": 0.4, "epochs": 3, "hidden_dims": [8],
            "lr_decay_epochs": [], "batch_size": 16,
            "dataset": {"kind": "blobs", "k": 3, "n_per_class": 15, "seed": 1}
        }"#,
    );
    let out = pskd(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--alpha-T",
        "0.8",
        "--out",
        dir.path().join("runs").to_str().unwrap(),
    ]);
    let run_dir = stdout_path(&out);
    let manifest = fs::read_to_string(run_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"alpha_t_final\": 0.8"), "{manifest}");
}

#[test]
fn invalid_config_exits_2_with_field_message() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"epochs": 0}"#);
    let out = pskd(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("runs").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("total_epochs"), "{stderr}");

    // Unknown key: also exit 2, naming the key.
    let config = write_config(dir.path(), r#"{"epochz": 5}"#);
    let out = pskd(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("runs").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
}

#[test]
fn unknown_subcommand_or_flag_exits_2() {
    let out = pskd(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = pskd(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_matches_final_epoch_logged_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{
            "method": "pskd", "epochs": 6, "batch_size": 16, "hidden_dims": [16],
            "lr_decay_epochs": [4], "seed": 2, "val_fraction": 0.2,
            "dataset": {"kind": "spirals", "k": 3, "n_per_class": 40, "seed": 5}
        }"#,
    );
    let out = pskd(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("runs").to_str().unwrap(),
    ]);
    let run_dir = stdout_path(&out);

    let eval_out = pskd(&[
        "eval",
        "--model",
        run_dir.join("model.json").to_str().unwrap(),
        "--split",
        "val",
        "--out",
        dir.path().join("eval").to_str().unwrap(),
    ]);
    let eval_dir = stdout_path(&eval_out);
    for file in ["summary.csv", "reliability.csv", "risk_coverage.csv"] {
        assert!(eval_dir.join(file).exists(), "{file} missing");
    }

    // The eval summary reproduces the final epoch's logged validation
    // metrics exactly.
    let history = fs::read_to_string(run_dir.join("history.csv")).unwrap();
    let last = history.lines().last().unwrap();
    let fields: Vec<&str> = last.split(',').collect();
    let (logged_nll, logged_top1) = (fields[4], fields[5]);

    let summary = fs::read_to_string(eval_dir.join("summary.csv")).unwrap();
    let get = |metric: &str| {
        summary
            .lines()
            .find(|l| l.starts_with(&format!("{metric},")))
            .unwrap_or_else(|| panic!("{metric} missing from summary"))
            .split(',')
            .nth(1)
            .unwrap()
            .to_string()
    };
    assert_eq!(get("nll"), logged_nll);
    assert_eq!(get("top1_error"), logged_top1);

    // --bins changes the reliability table's row count.
    let eval10 = pskd(&[
        "eval",
        "--model",
        run_dir.join("model.json").to_str().unwrap(),
        "--bins",
        "10",
        "--out",
        dir.path().join("eval10").to_str().unwrap(),
    ]);
    let eval10_dir = stdout_path(&eval10);
    let reliability = fs::read_to_string(eval10_dir.join("reliability.csv")).unwrap();
    assert_eq!(reliability.lines().count(), 11); // header + 10 bins
}

#[test]
fn eval_ensemble_accepts_multiple_models_and_checks_dims() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), QUICK);
    let mut model_args: Vec<String> = Vec::new();
    for seed in ["4", "5"] {
        let out = pskd(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--seed",
            seed,
            "--out",
            dir.path().join("runs").to_str().unwrap(),
        ]);
        let run_dir = stdout_path(&out);
        model_args.push(run_dir.join("model.json").to_string_lossy().into_owned());
    }
    let out = pskd(&[
        "eval",
        "--model",
        &model_args[0],
        "--model",
        &model_args[1],
        "--split",
        "all",
        "--out",
        dir.path().join("ens").to_str().unwrap(),
    ]);
    let eval_dir = stdout_path(&out);
    assert!(eval_dir.join("summary.csv").exists());

    // Dimension mismatch: evaluate a 2-feature model on a 3-feature
    // dataset.
    let bad_config = write_config(
        &dir.path().join("."),
        r#"{"dataset": {"kind": "blobs", "k": 3, "n_per_class": 10, "dim": 3, "seed": 1}}"#,
    );
    let out = pskd(&[
        "eval",
        "--model",
        &model_args[0],
        "--config",
        bad_config.to_str().unwrap(),
        "--split",
        "all",
        "--out",
        dir.path().join("bad").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn analyze_needs_per_example_history() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), QUICK);

    // Without per-example logging: clear error naming the flag, exit 2.
    let out = pskd(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("runs").to_str().unwrap(),
    ]);
    let run_dir = stdout_path(&out);
    let analyze = pskd(&["analyze", "--run", run_dir.to_str().unwrap()]);
    assert_eq!(analyze.status.code(), Some(2));
    assert!(
        String::from_utf8_lossy(&analyze.stderr).contains("--per-example-log"),
        "error must name the missing flag"
    );

    // With logging: analyze writes the report CSVs.
    let out = pskd(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--per-example-log",
        "true",
        "--out",
        dir.path().join("runs2").to_str().unwrap(),
    ]);
    let run_dir = stdout_path(&out);
    let analyze = pskd(&["analyze", "--run", run_dir.to_str().unwrap()]);
    assert!(analyze.status.success());
    let hard = fs::read_to_string(run_dir.join("hard_examples.csv")).unwrap();
    assert!(hard.starts_with(
        "epoch,group,mean_gt_prob,mean_max_prob,mean_rescaling_factor,n_examples"
    ));
    assert!(run_dir.join("curves.csv").exists());
}

#[test]
fn analyze_full_pipeline_on_spirals_shows_mining() {
    // Full pipeline: train self-distillation on spirals with per-example
    // logging, analyze the run, and check the mining signature in the
    // produced CSV: at the final epoch the hard group's mean rescaling
    // factor exceeds the easy group's.
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{
            "method": "pskd", "alpha_t": 0.8, "epochs": 60, "batch_size": 8,
            "hidden_dims": [128, 128], "lr_decay_epochs": [30, 45],
            "weight_decay": 0.0, "val_fraction": 0.5, "seed": 1,
            "per_example_log": true,
            "dataset": {"kind": "spirals", "k": 3, "n_per_class": 60, "noise": 0.1, "seed": 7}
        }"#,
    );
    let out = pskd(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("runs").to_str().unwrap(),
    ]);
    let run_dir = stdout_path(&out);
    let analyze = pskd(&["analyze", "--run", run_dir.to_str().unwrap()]);
    assert!(analyze.status.success());

    let csv = fs::read_to_string(run_dir.join("hard_examples.csv")).unwrap();
    let mut hard_final = None;
    let mut easy_final = None;
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields[0] == "60" && !fields[4].is_empty() {
            let factor: f64 = fields[4].parse().unwrap();
            match fields[1] {
                "hard" => hard_final = Some(factor),
                "easy" => easy_final = Some(factor),
                _ => {}
            }
        }
    }
    let (hard, easy) = (hard_final.unwrap(), easy_final.unwrap());
    assert!(
        hard > easy,
        "final epoch: hard factor {hard} must exceed easy factor {easy}"
    );
}

#[test]
fn runtime_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{
            "method": "hard", "epochs": 5, "batch_size": 16, "hidden_dims": [8],
            "lr": 1e200, "lr_decay_epochs": [],
            "dataset": {"kind": "blobs", "k": 3, "n_per_class": 15, "seed": 1}
        }"#,
    );
    let out = pskd(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("runs").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite loss"));
}

#[test]
fn sweep_writes_comparison_csv_with_stddev() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{
            "epochs": 4, "batch_size": 16, "hidden_dims": [8],
            "lr_decay_epochs": [3], "seed": 1, "val_fraction": 0.2,
            "dataset": {"kind": "blobs", "k": 3, "n_per_class": 20, "seed": 1}
        }"#,
    );
    let out = pskd(&[
        "sweep-alpha",
        "--config",
        config.to_str().unwrap(),
        "--alphas",
        "0.0,0.8",
        "--num-seeds",
        "3",
        "--out",
        dir.path().join("sweeps").to_str().unwrap(),
    ]);
    let sweep_dir = stdout_path(&out);
    let csv = fs::read_to_string(sweep_dir.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert!(rows[0].contains("val_top1_std"));
    assert_eq!(rows.len(), 3); // header + 2 alphas
    for row in &rows[1..] {
        assert_eq!(row.split(',').nth(2).unwrap(), "3"); // n_seeds
    }

    // A single alpha is a usage error.
    let out = pskd(&[
        "sweep-alpha",
        "--config",
        config.to_str().unwrap(),
        "--alphas",
        "0.8",
        "--out",
        dir.path().join("sweeps").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // Fixed-alpha mode runs constant-alpha arms, flagged in the CSV.
    let out = pskd(&[
        "sweep-alpha",
        "--config",
        config.to_str().unwrap(),
        "--alphas",
        "0.1,0.8",
        "--fixed-alpha",
        "--out",
        dir.path().join("sweeps-fixed").to_str().unwrap(),
    ]);
    let sweep_dir = stdout_path(&out);
    let csv = fs::read_to_string(sweep_dir.join("sweep.csv")).unwrap();
    for row in csv.lines().skip(1) {
        assert_eq!(row.split(',').nth(1).unwrap(), "1"); // fixed_alpha column
    }
}

#[test]
fn run_directories_are_never_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), QUICK);
    let runs = dir.path().join("runs");
    let a = stdout_path(&pskd(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        runs.to_str().unwrap(),
    ]));
    let b = stdout_path(&pskd(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        runs.to_str().unwrap(),
    ]));
    assert_ne!(a, b);
    assert!(a.exists() && b.exists());
}

#[test]
fn disk_teacher_leaves_cache_files_in_run_dir() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{
            "method": "pskd", "epochs": 4, "batch_size": 16, "hidden_dims": [8],
            "teacher": "disk", "lr_decay_epochs": [3],
            "dataset": {"kind": "blobs", "k": 3, "n_per_class": 15, "seed": 1}
        }"#,
    );
    let out = pskd(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("runs").to_str().unwrap(),
    ]);
    let run_dir = stdout_path(&out);
    let caches: Vec<_> = fs::read_dir(run_dir.join("caches")).unwrap().collect();
    assert_eq!(caches.len(), 3); // epochs 1..3 feed epochs 2..4
}
