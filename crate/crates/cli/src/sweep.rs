//! Ablation sweeps: one full pipeline per grid point with shared seeds.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use clap::ValueEnum;
use dora::dynamics::Regime;
use dora::report::write_csv;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{Paths, RunConfig};
use crate::error::CliError;
use crate::manifest::{hash_files, Manifest, StageKey};
use crate::stages::{eval_dir, pipeline, SUMMARY_FILE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    Beta,
    History,
    DataSize,
    SwitchRate,
    DebiasOnoff,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Beta => "beta",
            SweepKind::History => "history",
            SweepKind::DataSize => "data-size",
            SweepKind::SwitchRate => "switch-rate",
            SweepKind::DebiasOnoff => "debias-onoff",
        }
    }

    /// For `debias-onoff`, 1 keeps the configured β and 0 disables the debias term.
    pub fn default_grid(self) -> Vec<f64> {
        match self {
            SweepKind::Beta => vec![0.2, 1.0, 10.0],
            SweepKind::History => vec![4.0, 8.0, 16.0],
            SweepKind::DataSize => vec![0.5, 1.0],
            SweepKind::SwitchRate => vec![10.0, 30.0, 50.0],
            SweepKind::DebiasOnoff => vec![1.0, 0.0],
        }
    }

    fn check_value(self, v: f64) -> Result<(), CliError> {
        let ok = match self {
            SweepKind::Beta => v >= 0.0,
            SweepKind::History | SweepKind::SwitchRate => v >= 1.0 && v.fract() == 0.0,
            SweepKind::DataSize => v > 0.0,
            SweepKind::DebiasOnoff => v == 0.0 || v == 1.0,
        };
        if ok && v.is_finite() {
            Ok(())
        } else {
            Err(CliError::User(format!(
                "invalid {} grid value {v}",
                self.name()
            )))
        }
    }
}

pub fn sweep_dir(base: &RunConfig, kind: SweepKind) -> PathBuf {
    base.paths
        .results_dir
        .join(format!("sweep-{}", kind.name()))
}

/// Config of one grid cell. Cells reuse whatever upstream stages the varied
/// field does not touch, so shared stages run once.
pub fn cell_config(base: &RunConfig, kind: SweepKind, value: f64) -> Result<RunConfig, CliError> {
    kind.check_value(value)?;
    let root = sweep_dir(base, kind).join(format!("value-{value}"));
    let own = Paths::under(&root);
    let mut cfg = base.clone();
    cfg.paths = Paths {
        data_dir: base.paths.data_dir.clone(),
        ..own.clone()
    };
    match kind {
        SweepKind::Beta => cfg.encoder.beta = value,
        SweepKind::History => cfg.encoder.history_len = value as usize,
        SweepKind::DataSize => {
            cfg.data.transitions_per_task =
                (base.data.transitions_per_task as f64 * value).round() as usize;
            cfg.paths.data_dir = own.data_dir;
        }
        SweepKind::SwitchRate => {
            cfg.eval.regime = Regime::Nonstationary;
            cfg.eval.switch_interval = value as usize;
            cfg.paths.checkpoint_dir = base.paths.checkpoint_dir.clone();
        }
        SweepKind::DebiasOnoff => {
            if value == 0.0 {
                cfg.encoder.beta = 0.0;
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kind: String,
    pub value: String,
    pub mean: f64,
    pub std: f64,
    pub status: String,
}

pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub csv: PathBuf,
}

pub fn sweep(base: &RunConfig, kind: SweepKind, grid: &[f64]) -> Result<SweepOutcome, CliError> {
    if grid.is_empty() {
        return Err(CliError::User("sweep grid is empty".into()));
    }
    let cells = grid
        .iter()
        .map(|&v| Ok((v, cell_config(base, kind, v)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let started = Instant::now();
    let mut rows = Vec::with_capacity(cells.len());
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for (value, cfg) in &cells {
        log::info!("sweep {}: value {value}", kind.name());
        let row = |mean, std, status: String| SweepRow {
            kind: kind.name().to_string(),
            value: value.to_string(),
            mean,
            std,
            status,
        };
        match pipeline(cfg, false, false) {
            Ok(reports) => {
                let summary = reports.last().and_then(|r| r.summary()).unwrap_or_default();
                let get = |k: &str| summary[k].as_f64().unwrap_or(f64::NAN);
                rows.push(row(get("mean"), get("std"), "ok".into()));
                summaries.push(eval_dir(cfg).join(SUMMARY_FILE));
            }
            Err(e) => {
                log::error!("sweep {} value {value} failed: {e}", kind.name());
                rows.push(row(f64::NAN, f64::NAN, format!("error: {e}")));
                failures.push(format!("{value}: {e}"));
            }
        }
    }
    let dir = sweep_dir(base, kind);
    let csv = dir.join("sweep.csv");
    write_csv(
        &csv,
        &json!({ "kind": "sweep", "sweep": kind.name(), "grid": grid }),
        &rows,
    )?;
    if !failures.is_empty() {
        return Err(CliError::Internal(format!(
            "{} of {} sweep cells failed (partial results in {}): {}",
            failures.len(),
            grid.len(),
            csv.display(),
            failures.join("; ")
        )));
    }
    let mut base_snapshot = base.clone();
    base_snapshot.paths = Paths::default();
    let key = StageKey {
        stage: "sweep".into(),
        seed: base.global_seed,
        config: json!({ "kind": kind.name(), "grid": grid, "base": base_snapshot }),
        inputs: summaries
            .iter()
            .enumerate()
            .map(|(i, p)| {
                Ok((
                    format!("cell-{i}/{SUMMARY_FILE}"),
                    crate::manifest::hash_file(p)?,
                ))
            })
            .collect::<Result<BTreeMap<_, _>, CliError>>()?,
    };
    Manifest::new(
        key,
        hash_files("out", [&csv])?,
        started.elapsed().as_secs_f64(),
    )
    .write(&dir)?;
    Ok(SweepOutcome { rows, csv })
}
