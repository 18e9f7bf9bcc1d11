//! End-to-end exit-code and artifact tests against the compiled binary.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfs"))
        .args(args)
        .output()
        .expect("spawn mfs")
}

fn run_in(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfs"))
        .args(args)
        .arg("--out-dir")
        .arg(out_dir)
        .output()
        .expect("spawn mfs")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn read_json(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path).expect("read artifact");
    serde_json::from_str(&text).expect("valid JSON")
}

#[test]
fn explain_halfmoon_writes_artifacts_and_flips() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path().join("run");
    let output = run_in(
        &[
            "explain",
            "--gen",
            "halfmoon",
            "--n",
            "100",
            "--seed",
            "7",
            "--target",
            "misclassified:first",
        ],
        &out,
    );
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
    let result = read_json(&out.join("result.json"));
    assert_eq!(result["flipped_on_retrain"], serde_json::Value::Bool(true));
    assert!(out.join("trajectory.csv").exists());
    assert!(out.join("boundary_grid.csv").exists());

    // The manifest names exactly the files present in the output directory.
    let manifest = read_json(&out.join("manifest.json"));
    let mut listed: Vec<String> = manifest["artifact_paths"]
        .as_array()
        .expect("artifact list")
        .iter()
        .map(|v| v.as_str().expect("path string").to_string())
        .collect();
    listed.sort();
    let mut present: Vec<String> = std::fs::read_dir(&out)
        .expect("read out dir")
        .map(|e| e.expect("entry").file_name().to_string_lossy().into_owned())
        .collect();
    present.sort();
    assert_eq!(listed, present);
    assert_eq!(manifest["command"], "explain");
}

#[test]
fn explain_capped_run_exits_no_flip() {
    let dir = tempfile::tempdir().expect("tempdir");
    let output = run_in(
        &[
            "explain",
            "--gen",
            "halfmoon",
            "--n",
            "100",
            "--seed",
            "7",
            "--target",
            "point:-3,3",
            "--max-set-size",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(code(&output), 3, "stderr: {}", stderr(&output));
    assert!(
        stderr(&output).contains("did not flip"),
        "stderr: {}",
        stderr(&output)
    );
    let result = read_json(&dir.path().join("result.json"));
    assert_eq!(result["flipped_on_retrain"], serde_json::Value::Bool(false));
}

#[test]
fn explain_row_out_of_range_is_usage_error() {
    let output = run(&[
        "explain",
        "--gen",
        "halfmoon",
        "--n",
        "100",
        "--target",
        "row:99999",
    ]);
    assert_eq!(code(&output), 2);
    assert!(
        stderr(&output).contains("99999"),
        "stderr: {}",
        stderr(&output)
    );
}

#[test]
fn explain_negative_epsilon_is_usage_error() {
    let output = run(&["explain", "--gen", "halfmoon", "--epsilon", "-1"]);
    assert_eq!(code(&output), 2);
    assert!(
        stderr(&output).contains("epsilon"),
        "stderr: {}",
        stderr(&output)
    );
}

#[test]
fn explain_unknown_update_mode_is_usage_error() {
    let output = run(&["explain", "--gen", "halfmoon", "--update-mode", "fast"]);
    assert_eq!(code(&output), 2);
}

#[test]
fn explain_requires_exactly_one_source() {
    let output = run(&["explain"]);
    assert_eq!(code(&output), 2);
    assert!(
        stderr(&output).contains("--gen or --data"),
        "stderr: {}",
        stderr(&output)
    );
}

#[test]
fn debug_zero_flip_fraction_is_usage_error() {
    let output = run(&["debug", "--flip", "0"]);
    assert_eq!(code(&output), 2);
    assert!(
        stderr(&output).contains("(0, 0.5]"),
        "stderr: {}",
        stderr(&output)
    );
}

#[test]
fn poison_three_targets_reports_three_entries() {
    let dir = tempfile::tempdir().expect("tempdir");
    let output = run_in(&["poison", "--targets", "3", "--seed", "1"], dir.path());
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
    let outcomes = read_json(&dir.path().join("poison.json"));
    let entries = outcomes.as_array().expect("outcome array");
    assert_eq!(entries.len(), 3);
    for entry in entries {
        let failed = entry["attack_failed"].as_bool().expect("flag");
        if !failed {
            assert!(
                entry["size_poisoned"].is_u64(),
                "success without size: {entry}"
            );
            assert!(
                entry["poison_rank"].is_u64(),
                "success without rank: {entry}"
            );
        }
    }
    assert!(dir.path().join("poison.csv").exists());
}

#[test]
fn bound_observed_error_is_monotone() {
    let dir = tempfile::tempdir().expect("tempdir");
    let output = run_in(
        &[
            "bound", "--gen", "halfmoon", "--n", "50", "--alphas", "0.1,1,10",
        ],
        dir.path(),
    );
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
    let estimates = read_json(&dir.path().join("bound.json"));
    let observed: Vec<f64> = estimates
        .as_array()
        .expect("estimate array")
        .iter()
        .map(|e| e["observed_error"].as_f64().expect("observed_error"))
        .collect();
    assert_eq!(observed.len(), 3);
    for pair in observed.windows(2) {
        assert!(
            pair[1] <= pair[0],
            "observed errors not monotone: {observed:?}"
        );
    }
    assert!(dir.path().join("bound.csv").exists());
}

#[test]
fn bound_accepts_csv_datasets() {
    let dir = tempfile::tempdir().expect("tempdir");
    let csv_path = dir.path().join("moons.csv");
    let ds = mfs_core::data::gen_halfmoon(40, 0.2, 3).expect("generator");
    mfs_core::data::save_csv(&ds, &csv_path).expect("save csv");
    let out = dir.path().join("run");
    let output = run_in(
        &[
            "bound",
            "--data",
            csv_path.to_str().expect("utf8 path"),
            "--alphas",
            "1",
        ],
        &out,
    );
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
    assert!(out.join("bound.json").exists());
}

#[test]
fn dry_run_prints_resolved_config_and_writes_nothing() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path().join("never-created");
    let output = run_in(&["explain", "--gen", "halfmoon", "--dry-run"], &out);
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
    assert!(!out.exists(), "dry run created {out:?}");
    let resolved: serde_json::Value =
        serde_json::from_slice(&output.stdout).expect("resolved config JSON");
    assert_eq!(resolved["mfs"]["epsilon"].as_f64(), Some(0.4));
    assert_eq!(resolved["target"], "misclassified:first");
}

#[test]
fn out_dir_env_var_is_honored() {
    let dir = tempfile::tempdir().expect("tempdir");
    let output = Command::new(env!("CARGO_BIN_EXE_mfs"))
        .args(["bound", "--gen", "halfmoon", "--n", "30", "--alphas", "1"])
        .env("MFS_OUT_DIR", dir.path())
        .output()
        .expect("spawn mfs");
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
    assert!(dir.path().join("bound.json").exists());
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn help_exits_zero_for_every_command() {
    for args in [
        vec!["--help"],
        vec!["explain", "--help"],
        vec!["debug", "--help"],
        vec!["poison", "--help"],
        vec!["bound", "--help"],
    ] {
        let output = run(&args);
        assert_eq!(code(&output), 0, "args {args:?}");
        assert!(
            String::from_utf8_lossy(&output.stdout).contains("Usage"),
            "args {args:?}"
        );
    }
}
