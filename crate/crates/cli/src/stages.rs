//! Pipeline stages. Each stage owns one output directory holding its files
//! and a manifest; a stage whose manifest matches its inputs is skipped.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dora::dataset::{
    compute_return_stats, generate_dataset, read_dataset, write_dataset, ControllerProfile,
    ReturnStats, TaskDataset,
};
use dora::dynamics::{stratified_iid_tasks, Regime};
use dora::encoder::{
    load_encoder, save_encoder, train_encoder, write_loss_csv, EncoderError, EncoderState,
};
use dora::eval::{
    debias_probe, evaluate, representation_scatter, shared_dynamics_corpus, task_retrieval,
    track_episodes, validate_bounds, SpeedReport,
};
use dora::policy::{
    label_dataset, load_policy, save_policy, train_policy, write_log_csv, PolicyError, PolicyState,
    ReplayData,
};
use dora::report::write_csv;
use dora::rng::derive_seed;
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{io_error, CliError};
use crate::manifest::{hash_files, Manifest, StageKey};

const SEED_DATA: u64 = 1;
const SEED_ENCODER: u64 = 2;
const SEED_POLICY: u64 = 3;
const SEED_EVAL: u64 = 4;
const SEED_TRACK: u64 = 5;
const SEED_PROBE: u64 = 6;

pub const ENCODER_FILE: &str = "encoder.ckpt";
pub const POLICY_FILE: &str = "policy.ckpt";
pub const RETURN_STATS_FILE: &str = "return_stats.json";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Debug)]
pub struct StageReport {
    pub stage: String,
    pub dir: PathBuf,
    pub skipped: bool,
    pub manifest: Manifest,
}

impl StageReport {
    /// The stage's `summary.json`, if it wrote one.
    pub fn summary(&self) -> Option<serde_json::Value> {
        let text = fs::read_to_string(self.dir.join(SUMMARY_FILE)).ok()?;
        serde_json::from_str(&text).ok()
    }
}

fn run_stage(
    dir: &Path,
    key: StageKey,
    force: bool,
    body: impl FnOnce(&Path) -> Result<Vec<PathBuf>, CliError>,
) -> Result<StageReport, CliError> {
    let stage = key.stage.clone();
    if !force && Manifest::is_current(dir, &key) {
        log::info!("{stage}: up to date in {}", dir.display());
        return Ok(StageReport {
            stage,
            dir: dir.to_path_buf(),
            skipped: true,
            manifest: Manifest::read(dir)?,
        });
    }
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let started = Instant::now();
    let outputs = body(dir).map_err(|e| e.in_stage(&stage))?;
    let manifest = Manifest::new(
        key,
        hash_files("out", &outputs)?,
        started.elapsed().as_secs_f64(),
    );
    manifest.write(dir)?;
    log::info!(
        "{stage}: wrote {} files to {}",
        outputs.len(),
        dir.display()
    );
    Ok(StageReport {
        stage,
        dir: dir.to_path_buf(),
        skipped: false,
        manifest,
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("json serializes");
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn require(path: &Path, producer: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::User(format!(
            "missing input {}; run `dora {producer}` first",
            path.display()
        )))
    }
}

pub fn train_paths(cfg: &RunConfig) -> Vec<PathBuf> {
    (0..cfg.data.n_tasks)
        .map(|i| cfg.paths.data_dir.join(format!("train_{i:03}.dora")))
        .collect()
}

pub fn heldout_paths(cfg: &RunConfig) -> Vec<PathBuf> {
    (0..cfg.data.n_tasks)
        .map(|i| cfg.paths.data_dir.join(format!("heldout_{i:03}.dora")))
        .collect()
}

fn load_datasets(cfg: &RunConfig, paths: &[PathBuf]) -> Result<Vec<TaskDataset>, CliError> {
    paths
        .iter()
        .map(|p| {
            require(p, "gen-data")?;
            let d = read_dataset(p)?;
            if d.env_id() != cfg.env_id {
                return Err(CliError::User(format!(
                    "{} holds {} data but the config targets {}",
                    p.display(),
                    d.env_id(),
                    cfg.env_id
                )));
            }
            Ok(d)
        })
        .collect()
}

fn load_stats(cfg: &RunConfig) -> Result<ReturnStats, CliError> {
    let path = cfg.paths.data_dir.join(RETURN_STATS_FILE);
    require(&path, "gen-data")?;
    let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::User(format!("{}: {e}", path.display())))
}

fn encoder_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.encoder_dir().join(ENCODER_FILE)
}

fn policy_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.policy_dir().join(POLICY_FILE)
}

fn load_models(cfg: &RunConfig) -> Result<(EncoderState, PolicyState), CliError> {
    let (ep, pp) = (encoder_path(cfg), policy_path(cfg));
    require(&ep, "train-encoder")?;
    require(&pp, "train-policy")?;
    Ok((load_encoder(&ep)?, load_policy(&pp)?))
}

fn stage_key(
    stage: &str,
    cfg: &RunConfig,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
) -> StageKey {
    StageKey {
        stage: stage.to_string(),
        seed: cfg.global_seed,
        config: json!({ "env_id": cfg.env_id, "stage": config }),
        inputs,
    }
}

fn model_inputs(cfg: &RunConfig) -> Result<BTreeMap<String, String>, CliError> {
    let (ep, pp, sp) = (
        encoder_path(cfg),
        policy_path(cfg),
        cfg.paths.data_dir.join(RETURN_STATS_FILE),
    );
    require(&ep, "train-encoder")?;
    require(&pp, "train-policy")?;
    require(&sp, "gen-data")?;
    let mut inputs = hash_files("encoder", [&ep])?;
    inputs.extend(hash_files("policy", [&pp])?);
    inputs.extend(hash_files("data", [&sp])?);
    Ok(inputs)
}

/// Training and held-out datasets for every task, plus return statistics.
pub fn gen_data(cfg: &RunConfig, force: bool) -> Result<StageReport, CliError> {
    let key = stage_key("gen-data", cfg, json!(cfg.data), BTreeMap::new());
    run_stage(&cfg.paths.data_dir, key, force, |dir| {
        let seed = derive_seed(cfg.global_seed, &[SEED_DATA]);
        let env = cfg.env_id;
        let n = cfg.data.n_tasks;
        let specs = stratified_iid_tasks(env, n, derive_seed(seed, &[0]));
        let profiles = ControllerProfile::family(env, n, derive_seed(seed, &[1]));
        let (train, held) = (train_paths(cfg), heldout_paths(cfg));
        let mut datasets = Vec::with_capacity(n);
        for i in 0..n {
            let d = generate_dataset(
                i,
                &specs[i],
                &profiles[i],
                cfg.data.transitions_per_task,
                derive_seed(seed, &[2, i as u64]),
            )?;
            write_dataset(&train[i], &d)?;
            let h = generate_dataset(
                i,
                &specs[i],
                &profiles[i],
                cfg.data.heldout_transitions,
                derive_seed(seed, &[3, i as u64]),
            )?;
            write_dataset(&held[i], &h)?;
            datasets.push(d);
        }
        let stats = compute_return_stats(&datasets)?;
        let stats_path = dir.join(RETURN_STATS_FILE);
        write_json(&stats_path, &json!(stats))?;
        Ok(train.into_iter().chain(held).chain([stats_path]).collect())
    })
}

pub fn train_encoder_stage(cfg: &RunConfig, force: bool) -> Result<StageReport, CliError> {
    let train = train_paths(cfg);
    for p in &train {
        require(p, "gen-data")?;
    }
    let key = stage_key(
        "train-encoder",
        cfg,
        json!(cfg.encoder),
        hash_files("data", &train)?,
    );
    run_stage(&cfg.paths.encoder_dir(), key, force, |dir| {
        let datasets = load_datasets(cfg, &train)?;
        let tasks: Vec<_> = datasets.iter().map(|d| d.offline()).collect();
        let seed = derive_seed(cfg.global_seed, &[SEED_ENCODER]);
        let ckpt = dir.join(ENCODER_FILE);
        let trained = match train_encoder(&tasks, &cfg.encoder, seed) {
            Ok(t) => t,
            Err(EncoderError::Diverged {
                step, last_good, ..
            }) => {
                let fallback = dir.join("encoder_last_good.ckpt");
                save_encoder(&fallback, &last_good, json!({ "diverged_at": step }))?;
                return Err(CliError::Internal(format!(
                    "training diverged at step {step}; last finite parameters saved to {}",
                    fallback.display()
                )));
            }
            Err(e) => return Err(e.into()),
        };
        save_encoder(&ckpt, &trained.state, json!({ "seed": seed }))?;
        let log_path = dir.join("encoder_loss.csv");
        write_loss_csv(
            &log_path,
            &json!({ "kind": "encoder_loss", "beta": cfg.encoder.beta, "seed": seed }),
            &trained.log,
        )?;
        let last = trained.log.last().copied();
        write_json(
            &dir.join(SUMMARY_FILE),
            &json!({ "final": last, "steps": cfg.encoder.train_steps }),
        )?;
        Ok(vec![ckpt, log_path, dir.join(SUMMARY_FILE)])
    })
}

pub fn train_policy_stage(cfg: &RunConfig, force: bool) -> Result<StageReport, CliError> {
    let train = train_paths(cfg);
    for p in &train {
        require(p, "gen-data")?;
    }
    let ep = encoder_path(cfg);
    require(&ep, "train-encoder")?;
    let mut inputs = hash_files("data", &train)?;
    inputs.extend(hash_files("encoder", [&ep])?);
    let key = stage_key("train-policy", cfg, json!(cfg.policy), inputs);
    run_stage(&cfg.paths.policy_dir(), key, force, |dir| {
        let encoder = load_encoder(&ep)?;
        let datasets = load_datasets(cfg, &train)?;
        let parts = datasets
            .iter()
            .map(|d| label_dataset(&encoder, &d.offline()))
            .collect::<Result<Vec<ReplayData>, _>>()?;
        let replay = ReplayData::concat(&parts)?;
        let seed = derive_seed(cfg.global_seed, &[SEED_POLICY]);
        let ckpt = dir.join(POLICY_FILE);
        let trained = match train_policy(&replay, &cfg.policy, seed) {
            Ok(t) => t,
            Err(PolicyError::Diverged {
                step, last_good, ..
            }) => {
                let fallback = dir.join("policy_last_good.ckpt");
                save_policy(&fallback, &last_good, json!({ "diverged_at": step }))?;
                return Err(CliError::Internal(format!(
                    "training diverged at step {step}; last finite parameters saved to {}",
                    fallback.display()
                )));
            }
            Err(e) => return Err(e.into()),
        };
        save_policy(
            &ckpt,
            &trained.state,
            json!({ "seed": seed, "env_id": cfg.env_id }),
        )?;
        let log_path = dir.join("policy_log.csv");
        write_log_csv(
            &log_path,
            &json!({ "kind": "policy_log", "seed": seed }),
            &trained.log,
        )?;
        Ok(vec![ckpt, log_path])
    })
}

pub fn eval_dir(cfg: &RunConfig) -> PathBuf {
    cfg.paths.results_dir.join(format!(
        "eval-{}",
        cfg.eval.regime.to_string().to_lowercase()
    ))
}

pub fn eval_stage(cfg: &RunConfig, force: bool) -> Result<StageReport, CliError> {
    let key = stage_key("eval", cfg, json!(cfg.eval), model_inputs(cfg)?);
    run_stage(&eval_dir(cfg), key, force, |dir| {
        let (encoder, policy) = load_models(cfg)?;
        let stats = load_stats(cfg)?;
        let base = derive_seed(cfg.global_seed, &[SEED_EVAL]);
        let summary = evaluate(&encoder, &policy, cfg.env_id, &cfg.eval, Some(&stats), base)?;
        let episodes = dir.join("episodes.csv");
        write_csv(
            &episodes,
            &json!({ "kind": "eval", "regime": cfg.eval.regime, "base_seed": base }),
            &summary.episodes,
        )?;
        write_json(
            &dir.join(SUMMARY_FILE),
            &json!({
                "regime": cfg.eval.regime,
                "mean": summary.mean,
                "std": summary.std,
                "seed_means": summary.seed_means,
                "display": summary.to_string(),
            }),
        )?;
        Ok(vec![episodes, dir.join(SUMMARY_FILE)])
    })
}

#[derive(Serialize)]
struct SpeedRow {
    episode: usize,
    ratio: f64,
    zero_motion: bool,
    capped: bool,
}

pub fn track_stage(cfg: &RunConfig, force: bool) -> Result<StageReport, CliError> {
    let config = json!({
        "episodes": cfg.diagnostics.track_episodes,
        "episode_length": cfg.eval.episode_length,
        "switch_interval": cfg.eval.switch_interval,
    });
    let key = stage_key("track", cfg, config, model_inputs(cfg)?);
    run_stage(&cfg.paths.results_dir.join("track"), key, force, |dir| {
        let (encoder, policy) = load_models(cfg)?;
        let base = derive_seed(cfg.global_seed, &[SEED_TRACK]);
        let run = track_episodes(
            &encoder,
            &policy,
            cfg.env_id,
            cfg.diagnostics.track_episodes,
            &cfg.eval,
            base,
        )?;
        let rows: Vec<_> = run
            .outcomes
            .iter()
            .enumerate()
            .flat_map(|(i, o)| o.track.csv_rows(i))
            .collect();
        let speeds: Vec<_> = run
            .speeds
            .iter()
            .enumerate()
            .map(|(episode, s): (usize, &SpeedReport)| SpeedRow {
                episode,
                ratio: s.ratio,
                zero_motion: s.zero_motion,
                capped: s.capped,
            })
            .collect();
        let meta = json!({ "kind": "track", "switch_interval": cfg.eval.switch_interval, "window": encoder.config.history_len });
        let (track_csv, speed_csv) = (dir.join("track.csv"), dir.join("speeds.csv"));
        write_csv(&track_csv, &meta, &rows)?;
        write_csv(&speed_csv, &meta, &speeds)?;
        write_json(
            &dir.join(SUMMARY_FILE),
            &json!({ "mean_ratio": run.mean_ratio }),
        )?;
        Ok(vec![track_csv, speed_csv, dir.join(SUMMARY_FILE)])
    })
}

pub fn probe_stage(cfg: &RunConfig, force: bool) -> Result<StageReport, CliError> {
    let held = heldout_paths(cfg);
    for p in &held {
        require(p, "gen-data")?;
    }
    let mut inputs = model_inputs(cfg)?;
    inputs.extend(hash_files("data", &held)?);
    let key = stage_key("probe", cfg, json!(cfg.diagnostics), inputs);
    run_stage(&cfg.paths.results_dir.join("probe"), key, force, |dir| {
        let (encoder, policy) = load_models(cfg)?;
        let d = &cfg.diagnostics;
        let base = derive_seed(cfg.global_seed, &[SEED_PROBE]);
        let scatter = representation_scatter(
            &encoder,
            &policy,
            cfg.env_id,
            Regime::Iid,
            d.scatter_segments,
            d.scatter_segment_len,
            derive_seed(base, &[0]),
        )?;
        let heldout = load_datasets(cfg, &held)?;
        let retrieval = task_retrieval(
            &encoder,
            &heldout,
            d.retrieval_windows_per_task,
            derive_seed(base, &[1]),
        )?;
        let (specs, profiles) = shared_dynamics_corpus(cfg.env_id);
        let debias = debias_probe(
            &encoder,
            &profiles,
            &specs,
            &d.debias,
            derive_seed(base, &[2]),
        )?;

        let files = [
            dir.join("scatter.csv"),
            dir.join("retrieval.csv"),
            dir.join("debias.csv"),
        ];
        write_csv(
            &files[0],
            &json!({ "kind": "scatter", "regime": Regime::Iid }),
            &scatter,
        )?;
        write_csv(&files[1], &json!({ "kind": "retrieval" }), &retrieval.rows)?;
        write_csv(
            &files[2],
            &json!({ "kind": "debias", "beta": encoder.config.beta }),
            &debias.rows,
        )?;
        write_json(
            &dir.join(SUMMARY_FILE),
            &json!({
                "one_nn_accuracy": retrieval.one_nn_accuracy,
                "abs_spearman": retrieval.abs_spearman,
                "task_probe_accuracy": debias.task_accuracy,
                "policy_probe_accuracy": debias.policy_accuracy,
            }),
        )?;
        Ok(files.into_iter().chain([dir.join(SUMMARY_FILE)]).collect())
    })
}

pub fn bounds_stage(
    cfg: &RunConfig,
    instances: usize,
    seed: u64,
    force: bool,
) -> Result<StageReport, CliError> {
    if instances == 0 {
        return Err(CliError::User("--instances must be positive".into()));
    }
    let key = StageKey {
        stage: "validate-bounds".into(),
        seed,
        config: json!({ "instances": instances }),
        inputs: BTreeMap::new(),
    };
    run_stage(&cfg.paths.results_dir.join("bounds"), key, force, |dir| {
        let sweep = validate_bounds(instances, seed)?;
        let csv = dir.join("bounds.csv");
        write_csv(
            &csv,
            &json!({ "kind": "bounds", "seed": seed }),
            &sweep.rows,
        )?;
        write_json(
            &dir.join(SUMMARY_FILE),
            &json!({
                "instances": sweep.instances,
                "t1_holds": sweep.t1_holds,
                "t2_holds": sweep.t2_holds,
                "t2_marginal_gap": sweep.t2_marginal_gap,
            }),
        )?;
        Ok(vec![csv, dir.join(SUMMARY_FILE)])
    })
}

/// gen-data, train-encoder, train-policy and eval; diagnostics optional.
pub fn pipeline(
    cfg: &RunConfig,
    with_diagnostics: bool,
    force: bool,
) -> Result<Vec<StageReport>, CliError> {
    let mut reports = vec![
        gen_data(cfg, force)?,
        train_encoder_stage(cfg, force)?,
        train_policy_stage(cfg, force)?,
        eval_stage(cfg, force)?,
    ];
    if with_diagnostics {
        reports.push(track_stage(cfg, force)?);
        reports.push(probe_stage(cfg, force)?);
    }
    Ok(reports)
}
