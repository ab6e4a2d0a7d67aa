//! Contract tests for the `blockval` binary: verbs, flags, exit codes, and
//! output files.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_blockval"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path
}

const TINY: &str = r#"{
    "structure": { "blocks_per_client": [2, 1] },
    "dataset": { "dim": 3, "classes": 2, "samples_per_block": 20, "skew": 0.5 },
    "fl": { "rounds": 1, "local_epochs": 1, "learning_rate": 0.05, "batch_size": 8 },
    "metrics": ["sv", "tsv"],
    "runs": 2,
    "seed": 3
}"#;

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn validate_accepts_a_good_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let out = bin().arg("validate").arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("ok:"));
}

#[test]
fn validate_reports_each_violation_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{ "runs": 0, "metrics": ["sv", "mystery"] }"#,
    );
    let out = bin().arg("validate").arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("runs"), "{err}");
    assert!(err.contains("mystery"), "{err}");
}

#[test]
fn malformed_json_exits_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "{ not json");
    let out = bin().arg("validate").arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line"), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{ "runz": 3 }"#);
    let out = bin().arg("validate").arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("runz"), "{}", stderr(&out));
}

#[test]
fn missing_config_file_exits_3() {
    let out = bin()
        .arg("validate")
        .arg("/nonexistent/config.json")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn run_writes_requested_formats() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let out_dir = dir.path().join("out");
    let out = bin()
        .arg("run")
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .arg("--format")
        .arg("csv")
        .arg("--jobs")
        .arg("2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(out_dir.join("report.csv").exists());
    assert!(!out_dir.join("report.json").exists());
    let text = stdout(&out);
    assert!(text.contains("attacker_change_pct"), "{text}");
    assert!(text.contains("report.csv"), "{text}");
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let base = dir.path().join("base");
    let reseeded = dir.path().join("reseeded");
    for (out_dir, seed) in [(&base, None), (&reseeded, Some("99"))] {
        let mut cmd = bin();
        cmd.arg("run")
            .arg(&config)
            .arg("--out")
            .arg(out_dir)
            .arg("--format")
            .arg("csv");
        if let Some(s) = seed {
            cmd.arg("--seed").arg(s);
        }
        let out = cmd.output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    let a = std::fs::read(base.join("report.csv")).unwrap();
    let b = std::fs::read(reseeded.join("report.csv")).unwrap();
    assert_ne!(a, b, "overriding the seed must change the report");
}

#[test]
fn env_var_supplies_the_default_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let out_dir = dir.path().join("from-env");
    let out = bin()
        .arg("run")
        .arg(&config)
        .arg("--format")
        .arg("csv")
        .env("BLOCKVAL_OUT", &out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(out_dir.join("report.csv").exists());
}

#[test]
fn coeffs_writes_table_with_actions_and_checks() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let out_dir = dir.path().join("coeffs");
    let out = bin()
        .arg("coeffs")
        .arg(&config)
        .arg("--metric")
        .arg("sv")
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("closed-form"), "{}", stdout(&out));
    assert!(stdout(&out).contains("ok"), "{}", stdout(&out));
    assert!(out_dir.join("coeffs_sv.json").exists());
    let csv_text = std::fs::read_to_string(out_dir.join("coeffs_sv.csv")).unwrap();
    assert!(csv_text.starts_with("mask,size,action"), "{csv_text}");
    assert!(csv_text.contains("positive_augment"), "{csv_text}");
}

#[test]
fn coeffs_rejects_unknown_metric_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let out = bin()
        .arg("coeffs")
        .arg(&config)
        .arg("--metric")
        .arg("garbage")
        .arg("--out")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("garbage"), "{}", stderr(&out));
}

#[test]
fn zero_jobs_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let out = bin()
        .arg("run")
        .arg(&config)
        .arg("--jobs")
        .arg("0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
