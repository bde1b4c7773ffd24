//! Online adaptation, non-stationary evaluation, representation diagnostics
//! and the discrete bound-validation harness.

mod adapt;
mod bounds;
mod probe;
pub mod stats;
pub mod stubs;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{normalized_return, DatasetError, ReturnStats};
use crate::dynamics::{DynamicsError, EnvId, Regime, RegimeSampler, Schedule};
use crate::encoder::{EncoderError, EncoderState, SegmentBatch, TrajectorySegment};
use crate::policy::{act_deterministic, PolicyState};
use crate::rng::derive_seed;

pub use adapt::{
    adaptation_speed, post_switch, run_adaptation, AdaptationOutcome, SpeedReport, TrackCsvRow,
    TrackRecord, TrackRow, SPEED_RATIO_CAP,
};
pub use bounds::{
    discrete_kl, t2_candidates, validate_bound_t1, validate_bound_t2, validate_bounds, BoundCheck,
    BoundInstance, BoundRow, BoundSweep,
};
pub use probe::{
    debias_probe, representation_scatter, shared_dynamics_corpus, task_retrieval,
    DebiasProbeConfig, DebiasRow, ProbeReport, RetrievalReport, ScatterRow,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation configuration: {0}")]
    Config(String),
    #[error("environment mismatch: {0}")]
    EnvMismatch(String),
    #[error("return statistics are required to normalize scores")]
    MissingStats,
    #[error("track has no dynamics switch; the speed ratio is undefined")]
    NoSwitches,
    #[error("probe needs at least 2 classes on each axis ({0})")]
    TooFewClasses(String),
    #[error("invalid bound instance: {0}")]
    InvalidInstance(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Maps windows of `(previous action, state)` pairs to latent codes.
pub trait ContextEncoder {
    fn history_len(&self) -> usize;
    fn latent_dim(&self) -> usize;
    fn encode_windows(&self, windows: &[TrajectorySegment]) -> Result<Vec<Vec<f64>>, EvalError>;
    fn env_id(&self) -> Option<EnvId> {
        None
    }
}

/// Chooses an action from an observation and a latent code.
pub trait ActionSource {
    fn act(&self, observation: &[f64], z: &[f64]) -> Vec<f64>;
}

const ENCODE_CHUNK: usize = 1024;

impl ContextEncoder for EncoderState {
    fn history_len(&self) -> usize {
        self.config.history_len
    }

    fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn encode_windows(&self, windows: &[TrajectorySegment]) -> Result<Vec<Vec<f64>>, EvalError> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(ENCODE_CHUNK) {
            let batch = SegmentBatch::from_segments(chunk, self.net.input_dim)?;
            out.extend(self.representations(&batch)?);
        }
        Ok(out)
    }

    fn env_id(&self) -> Option<EnvId> {
        self.env_id
    }
}

/// Deterministic (mean) action.
impl ActionSource for PolicyState {
    fn act(&self, observation: &[f64], z: &[f64]) -> Vec<f64> {
        act_deterministic(self, observation, z)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub regime: Regime,
    pub n_tasks: usize,
    pub episode_length: usize,
    pub switch_interval: usize,
    pub n_seeds: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Nonstationary,
            n_tasks: 10,
            episode_length: 200,
            switch_interval: 50,
            n_seeds: 5,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.n_tasks == 0
            || self.episode_length == 0
            || self.switch_interval == 0
            || self.n_seeds == 0
        {
            return Err(EvalError::Config(
                "all evaluation sizes must be positive".to_string(),
            ));
        }
        if self.regime == Regime::Nonstationary && self.switch_interval > self.episode_length {
            return Err(EvalError::Config(format!(
                "switch_interval {} exceeds episode_length {}",
                self.switch_interval, self.episode_length
            )));
        }
        Ok(())
    }

    /// Dynamics for cell `(seed, task)`; identical across encoders and policies.
    pub fn schedule(
        &self,
        env: EnvId,
        base_seed: u64,
        seed: usize,
        task: usize,
    ) -> Result<Schedule, EvalError> {
        let mut sampler = RegimeSampler::new(
            self.regime,
            derive_seed(base_seed, &[seed as u64, task as u64, 0]),
        )
        .with_switch_interval(self.switch_interval);
        Ok(match self.regime {
            Regime::Nonstationary => sampler.schedule_nonstationary(env, self.episode_length)?,
            _ => Schedule::stationary(sampler.sample_dynamics(env)),
        })
    }

    pub fn reset_seed(base_seed: u64, seed: usize, task: usize) -> u64 {
        derive_seed(base_seed, &[seed as u64, task as u64, 1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub seed: usize,
    pub task: usize,
    pub episode_return: f64,
    pub normalized_return: f64,
    pub failed: bool,
}

/// Mean and population std of the per-seed mean normalized return.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean: f64,
    pub std: f64,
    pub seed_means: Vec<f64>,
    pub episodes: Vec<EpisodeRow>,
}

impl fmt::Display for EvalSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

/// Runs `n_tasks × n_seeds` adaptation episodes and normalizes each return.
pub fn evaluate(
    encoder: &dyn ContextEncoder,
    actor: &dyn ActionSource,
    env: EnvId,
    config: &EvalConfig,
    return_stats: Option<&ReturnStats>,
    base_seed: u64,
) -> Result<EvalSummary, EvalError> {
    config.validate()?;
    let return_stats = return_stats.ok_or(EvalError::MissingStats)?;
    let mut episodes = Vec::with_capacity(config.n_tasks * config.n_seeds);
    for seed in 0..config.n_seeds {
        for task in 0..config.n_tasks {
            let schedule = config.schedule(env, base_seed, seed, task)?;
            let out = run_adaptation(
                encoder,
                actor,
                &schedule,
                config.episode_length,
                EvalConfig::reset_seed(base_seed, seed, task),
            )?;
            episodes.push(EpisodeRow {
                seed,
                task,
                episode_return: out.episode_return,
                normalized_return: normalized_return(out.episode_return, return_stats),
                failed: out.failed,
            });
        }
    }
    let seed_means: Vec<f64> = (0..config.n_seeds)
        .map(|s| {
            let v: Vec<f64> = episodes
                .iter()
                .filter(|e| e.seed == s)
                .map(|e| e.normalized_return)
                .collect();
            stats::mean(&v)
        })
        .collect();
    Ok(EvalSummary {
        mean: stats::mean(&seed_means),
        std: stats::population_std(&seed_means),
        seed_means,
        episodes,
    })
}

/// Non-stationary tracking episodes and their mean adaptation-speed ratio.
pub struct TrackingRun {
    pub outcomes: Vec<AdaptationOutcome>,
    pub speeds: Vec<SpeedReport>,
    pub mean_ratio: f64,
}

pub fn track_episodes(
    encoder: &dyn ContextEncoder,
    actor: &dyn ActionSource,
    env: EnvId,
    n_episodes: usize,
    config: &EvalConfig,
    base_seed: u64,
) -> Result<TrackingRun, EvalError> {
    let cfg = EvalConfig {
        regime: Regime::Nonstationary,
        ..config.clone()
    };
    cfg.validate()?;
    let mut outcomes = Vec::with_capacity(n_episodes);
    let mut speeds = Vec::with_capacity(n_episodes);
    for ep in 0..n_episodes {
        let schedule = cfg.schedule(env, base_seed, 0, ep)?;
        let out = run_adaptation(
            encoder,
            actor,
            &schedule,
            cfg.episode_length,
            EvalConfig::reset_seed(base_seed, 0, ep),
        )?;
        speeds.push(adaptation_speed(&out.track, encoder.history_len())?);
        outcomes.push(out);
    }
    let ratios: Vec<f64> = speeds.iter().map(|s| s.ratio).collect();
    Ok(TrackingRun {
        outcomes,
        mean_ratio: stats::mean(&ratios),
        speeds,
    })
}
