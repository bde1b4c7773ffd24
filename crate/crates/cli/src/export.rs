//! Gathers finished CSV results into one directory for the plotting scripts.
//! Reads only result files, never checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dora::report::{split_metadata, write_csv};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{io_error, CliError};
use crate::manifest::{hash_files, Manifest, StageKey};
use crate::stages::SUMMARY_FILE;
use crate::sweep::SweepRow;

pub fn plots_dir(cfg: &RunConfig) -> PathBuf {
    cfg.paths.results_dir.join("plots")
}

fn sorted_subdirs(root: &Path, prefix: &str) -> Vec<PathBuf> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .is_some_and(|n| n.to_string_lossy().starts_with(prefix))
        })
        .collect();
    dirs.sort();
    dirs
}

fn ablation_rows(results: &Path) -> Result<(Vec<SweepRow>, Vec<PathBuf>), CliError> {
    let mut rows = Vec::new();
    let mut sources = Vec::new();
    for dir in sorted_subdirs(results, "sweep-") {
        let path = dir.join("sweep.csv");
        let Ok(text) = fs::read_to_string(&path) else {
            continue;
        };
        let (_, body) = split_metadata(&text)
            .ok_or_else(|| CliError::User(format!("{}: missing metadata line", path.display())))?;
        for rec in csv::Reader::from_reader(body.as_bytes()).deserialize::<SweepRow>() {
            rows.push(rec.map_err(|e| CliError::User(format!("{}: {e}", path.display())))?);
        }
        sources.push(path);
    }
    for dir in sorted_subdirs(results, "eval-") {
        let path = dir.join(SUMMARY_FILE);
        let Ok(text) = fs::read_to_string(&path) else {
            continue;
        };
        let v: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
        rows.push(SweepRow {
            kind: "eval".into(),
            value: v["regime"].as_str().unwrap_or("unknown").to_string(),
            mean: v["mean"].as_f64().unwrap_or(f64::NAN),
            std: v["std"].as_f64().unwrap_or(f64::NAN),
            status: "ok".into(),
        });
        sources.push(path);
    }
    Ok((rows, sources))
}

/// Writes `scatter.csv`, `track.csv`, `debias.csv` and `ablation.csv` for
/// whichever inputs exist; fails when none do.
pub fn export_plots_data(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let started = Instant::now();
    let results = &cfg.paths.results_dir;
    let out = plots_dir(cfg);
    let copies = [
        ("probe/scatter.csv", "scatter.csv"),
        ("track/track.csv", "track.csv"),
        ("probe/debias.csv", "debias.csv"),
    ];
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
    for (src, dst) in copies {
        let src = results.join(src);
        if !src.exists() {
            log::warn!("{} not found; skipping", src.display());
            continue;
        }
        let dst = out.join(dst);
        fs::copy(&src, &dst).map_err(|e| io_error(&src, e))?;
        inputs.push(src);
        outputs.push(dst);
    }
    let (rows, sources) = ablation_rows(results)?;
    if !rows.is_empty() {
        let dst = out.join("ablation.csv");
        write_csv(&dst, &json!({ "kind": "ablation" }), &rows)?;
        inputs.extend(sources);
        outputs.push(dst);
    }
    if outputs.is_empty() {
        return Err(CliError::User(format!(
            "nothing to export under {}; run eval, track, probe or sweep first",
            results.display()
        )));
    }
    let input_hashes: BTreeMap<String, String> = inputs
        .iter()
        .map(|p| {
            let rel = p
                .strip_prefix(results)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned();
            Ok((rel, crate::manifest::hash_file(p)?))
        })
        .collect::<Result<_, CliError>>()?;
    let key = StageKey {
        stage: "export-plots-data".into(),
        seed: cfg.global_seed,
        config: json!({}),
        inputs: input_hashes,
    };
    Manifest::new(
        key,
        hash_files("out", &outputs)?,
        started.elapsed().as_secs_f64(),
    )
    .write(&out)?;
    Ok(outputs)
}
