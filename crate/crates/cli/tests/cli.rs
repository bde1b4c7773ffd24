use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = include_str!("../../../configs/tiny.toml");

fn dora(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dora"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path.to_string_lossy().into_owned()
}

fn manifest_hash(dir: &Path) -> String {
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    v["content_hash"].as_str().unwrap().to_string()
}

#[test]
fn help_exits_zero() {
    let o = dora(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for sub in [
        "gen-data",
        "train-encoder",
        "train-policy",
        "eval",
        "track",
        "probe",
        "sweep",
        "validate-bounds",
        "export-plots-data",
    ] {
        assert!(stdout(&o).contains(sub), "{sub} missing from help");
    }
}

#[test]
fn validate_bounds_reports_both_counts() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_string_lossy().into_owned();
    let o = dora(&[
        "validate-bounds",
        "--instances",
        "100",
        "--seed",
        "0",
        "--root",
        &root,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("T2: 100/100 hold"), "{out}");
    assert!(out.contains("T1: "), "{out}");
    assert!(dir.path().join("results/bounds/bounds.csv").exists());
}

#[test]
fn missing_dataset_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_string_lossy().into_owned();
    let o = dora(&["train-encoder", "--root", &root]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("train_000.dora"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[encoder]\nlearning_rat = 0.1\n").unwrap();
    let o = dora(&["--config", &path.to_string_lossy(), "config"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learning_rat"), "{}", stderr(&o));
}

#[test]
fn config_exports_json_that_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = dora(&["--config", &cfg, "config", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let parsed: dora_cli::RunConfig = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(parsed, dora_cli::RunConfig::from_toml_str(TINY).unwrap());
}

#[test]
fn pipeline_resumes_and_detects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let root = dir.path().join("run");
    let root_s = root.to_string_lossy().into_owned();

    let first = dora(&[
        "--config",
        &cfg,
        "pipeline",
        "--diagnostics",
        "--root",
        &root_s,
    ]);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    assert_eq!(
        stdout(&first).matches(": done in").count(),
        6,
        "{}",
        stdout(&first)
    );

    let second = dora(&[
        "--config",
        &cfg,
        "pipeline",
        "--diagnostics",
        "--root",
        &root_s,
    ]);
    assert_eq!(second.status.code(), Some(0));
    assert_eq!(
        stdout(&second).matches(": up to date in").count(),
        6,
        "{}",
        stdout(&second)
    );

    let data = root.join("data/train_001.dora");
    let mut bytes = fs::read(&data).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    fs::write(&data, bytes).unwrap();
    let third = dora(&["--config", &cfg, "pipeline", "--root", &root_s]);
    assert_eq!(third.status.code(), Some(0), "{}", stderr(&third));
    assert!(
        stdout(&third).contains("gen-data: done"),
        "{}",
        stdout(&third)
    );

    let export = dora(&["export-plots-data", "--root", &root_s]);
    assert_eq!(export.status.code(), Some(0), "{}", stderr(&export));
    for f in ["scatter.csv", "track.csv", "debias.csv", "ablation.csv"] {
        let text = fs::read_to_string(root.join("results/plots").join(f)).unwrap();
        assert!(text.starts_with('{'), "{f} lacks a metadata line");
        assert!(text.lines().count() > 2, "{f} has no records");
    }
}

#[test]
fn identical_runs_in_different_directories_hash_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let roots = [dir.path().join("a"), dir.path().join("b")];
    for root in &roots {
        let o = dora(&[
            "--config",
            &cfg,
            "pipeline",
            "--diagnostics",
            "--root",
            &root.to_string_lossy(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for stage in [
        "data",
        "checkpoints/encoder",
        "checkpoints/policy",
        "results/eval-nonstationary",
        "results/track",
        "results/probe",
    ] {
        assert_eq!(
            manifest_hash(&roots[0].join(stage)),
            manifest_hash(&roots[1].join(stage)),
            "{stage}"
        );
    }
}

#[test]
fn export_without_results_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = dora(&["export-plots-data", "--root", &dir.path().to_string_lossy()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nothing to export"), "{}", stderr(&o));
}

#[test]
fn switch_rate_sweep_reuses_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let root = dir.path().join("run");
    let root_s = root.to_string_lossy().into_owned();
    let o = dora(&[
        "--config",
        &cfg,
        "sweep",
        "--kind",
        "switch-rate",
        "--grid",
        "10,30",
        "--root",
        &root_s,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(
        out.contains("switch-rate = 10:") && out.contains("switch-rate = 30:"),
        "{out}"
    );
    assert!(root.join("checkpoints/policy/policy.ckpt").exists());
    let csv = fs::read_to_string(root.join("results/sweep-switch-rate/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4, "{csv}");
}
