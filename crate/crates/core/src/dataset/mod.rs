//! Per-task offline datasets: generation with scripted behavior controllers,
//! return statistics for score normalization, and the on-disk format.

mod controller;
pub(crate) mod io;

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use controller::{behavior_action, feedback, ControllerProfile};
pub use io::{read_dataset, write_dataset, FORMAT_VERSION, MAGIC};

use crate::dynamics::{self, DynamicsError, DynamicsSpec, EnvId, HORIZON};
use crate::rng::{derive_seed, stream};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("need at least {horizon} transitions, asked for {requested}")]
    TooFewTransitions { requested: usize, horizon: usize },
    #[error("simulation failed after {collected} transitions: {source}")]
    PartialData {
        collected: usize,
        #[source]
        source: DynamicsError,
    },
    #[error("no complete episode in the provided datasets")]
    NoCompleteEpisode,
    #[error("refusing to write an empty dataset")]
    Empty,
    #[error("{path}: not a dataset file (bad magic bytes)")]
    BadMagic { path: String },
    #[error("{path}: format version {found}, this build reads version {expected}")]
    VersionMismatch {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("{path}: checksum mismatch in {section} section")]
    Checksum { path: String, section: &'static str },
    #[error("{path}: file is truncated")]
    Truncated { path: String },
    #[error("{path}: malformed header: {reason}")]
    Header { path: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One environment step. `true_mu` is recorded for diagnostics and is not
/// reachable through [`OfflineTask`], the view that training code consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub episode_id: u32,
    pub step_in_episode: u32,
    pub true_mu: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset {
    pub task_index: usize,
    pub spec: DynamicsSpec,
    pub profile: ControllerProfile,
    pub seed: u64,
    pub transitions: Vec<Transition>,
}

impl TaskDataset {
    pub fn env_id(&self) -> EnvId {
        self.spec.env_id
    }

    pub fn size(&self) -> usize {
        self.transitions.len()
    }

    /// Index ranges of each contiguous episode, in order.
    pub fn episodes(&self) -> Vec<Range<usize>> {
        episode_ranges(&self.transitions)
    }

    /// The training-facing view: states, actions, rewards and episode layout only.
    pub fn offline(&self) -> OfflineTask<'_> {
        OfflineTask {
            task_index: self.task_index,
            env_id: self.spec.env_id,
            transitions: &self.transitions,
            episodes: self.episodes(),
        }
    }
}

fn episode_ranges(transitions: &[Transition]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=transitions.len() {
        if i == transitions.len() || transitions[i].episode_id != transitions[start].episode_id {
            out.push(start..i);
            start = i;
        }
    }
    out
}

/// Read-only view of a dataset with the provenance fields (true parameter,
/// controller profile) left out.
#[derive(Clone, Debug)]
pub struct OfflineTask<'a> {
    pub task_index: usize,
    pub env_id: EnvId,
    transitions: &'a [Transition],
    episodes: Vec<Range<usize>>,
}

impl<'a> OfflineTask<'a> {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn episodes(&self) -> &[Range<usize>] {
        &self.episodes
    }

    pub fn state(&self, i: usize) -> &'a [f64] {
        &self.transitions[i].state
    }

    pub fn action(&self, i: usize) -> &'a [f64] {
        &self.transitions[i].action
    }

    pub fn next_state(&self, i: usize) -> &'a [f64] {
        &self.transitions[i].next_state
    }

    pub fn reward(&self, i: usize) -> f64 {
        self.transitions[i].reward
    }

    pub fn done(&self, i: usize) -> bool {
        self.transitions[i].done
    }
}

fn round32(v: f64) -> f64 {
    v as f32 as f64
}

/// Rolls full episodes of `profile` in `spec` until `n_transitions` are
/// collected; the final episode may be cut short. Stored values are rounded
/// to `f32` so the dataset survives a file round trip unchanged.
pub fn generate_dataset(
    task_index: usize,
    spec: &DynamicsSpec,
    profile: &ControllerProfile,
    n_transitions: usize,
    seed: u64,
) -> Result<TaskDataset, DatasetError> {
    if n_transitions < HORIZON {
        return Err(DatasetError::TooFewTransitions {
            requested: n_transitions,
            horizon: HORIZON,
        });
    }
    let env = spec.env_id;
    let mut noise_rng = stream(seed, &[1]);
    let mut transitions = Vec::with_capacity(n_transitions);
    let mut episode = 0u32;
    while transitions.len() < n_transitions {
        let mut state = dynamics::reset(spec, derive_seed(seed, &[2, episode as u64]));
        loop {
            let action = behavior_action(env, profile, &state.observation, &mut noise_rng);
            let out = dynamics::step(&state, spec, &action).map_err(|source| {
                DatasetError::PartialData {
                    collected: transitions.len(),
                    source,
                }
            })?;
            let bound = env.action_bound();
            transitions.push(Transition {
                state: state.observation.iter().map(|&v| round32(v)).collect(),
                action: action
                    .iter()
                    .map(|&v| round32(v.clamp(-bound, bound)))
                    .collect(),
                next_state: out.state.observation.iter().map(|&v| round32(v)).collect(),
                reward: round32(out.reward),
                done: out.done,
                episode_id: episode,
                step_in_episode: state.step_index as u32,
                true_mu: spec.mu,
            });
            if out.done || transitions.len() == n_transitions {
                break;
            }
            state = out.state;
        }
        episode += 1;
    }
    Ok(TaskDataset {
        task_index,
        spec: *spec,
        profile: profile.clone(),
        seed,
        transitions,
    })
}

/// Extremes of undiscounted episode returns, used for score normalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnStats {
    pub max_return: f64,
    pub min_return: f64,
}

impl ReturnStats {
    pub fn new(max_return: f64, min_return: f64) -> Self {
        Self {
            max_return,
            min_return,
        }
    }
}

/// Undiscounted returns of every complete episode (one that reaches `done`).
pub fn episode_returns(dataset: &TaskDataset) -> Vec<f64> {
    dataset
        .episodes()
        .into_iter()
        .filter(|r| {
            let t = &dataset.transitions;
            t[r.start].step_in_episode == 0 && t[r.end - 1].done
        })
        .map(|r| dataset.transitions[r].iter().map(|t| t.reward).sum())
        .collect()
}

pub fn compute_return_stats<'a>(
    datasets: impl IntoIterator<Item = &'a TaskDataset>,
) -> Result<ReturnStats, DatasetError> {
    let returns: Vec<f64> = datasets.into_iter().flat_map(episode_returns).collect();
    if returns.is_empty() {
        return Err(DatasetError::NoCompleteEpisode);
    }
    let max = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut min = returns.iter().copied().fold(f64::INFINITY, f64::min);
    if max <= min {
        log::warn!("degenerate return statistics (max == min == {max}); widening min by 1e-6");
        min = max - 1e-6;
    }
    Ok(ReturnStats::new(max, min))
}

/// `(x − min) / (max − min) × 100`; not clipped.
pub fn normalized_return(x: f64, stats: &ReturnStats) -> f64 {
    (x - stats.min_return) / (stats.max_return - stats.min_return) * 100.0
}
