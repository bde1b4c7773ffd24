//! Contextual conservative Q-learning on representation-labelled transitions:
//! a tanh-Gaussian actor, twin critics with polyak-trailing targets and the
//! sampled-action logsumexp penalty.

mod actor;
mod checkpoint;
mod cql;
mod label;
pub mod toy;
mod train;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::EncoderError;
use crate::nn::{Mlp, ParamSet};

pub use actor::{act_deterministic, actor_log_prob, actor_sample};
pub use checkpoint::{load_policy, save_policy, POLICY_KIND};
pub use cql::cql_penalty;
pub use label::label_dataset;
pub use train::{train_policy, write_log_csv, PolicyLogRow, TrainedPolicy};

pub const ACTOR_LOG_STD_MIN: f64 = -5.0;
pub const ACTOR_LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid policy configuration: {0}")]
    Config(String),
    #[error("environment mismatch: {0}")]
    EnvMismatch(String),
    #[error("replay data shape mismatch: {0}")]
    Shape(String),
    #[error("loss became non-finite at step {step}; last good state kept")]
    Diverged {
        step: usize,
        last_good: Box<PolicyState>,
        log: Vec<PolicyLogRow>,
    },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub gamma: f64,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub tau: f64,
    pub cql_alpha: f64,
    pub n_penalty_actions: usize,
    pub hidden_widths: Vec<usize>,
    pub batch_size: usize,
    pub train_steps: usize,
    pub entropy_coef: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            critic_lr: 3e-4,
            actor_lr: 3e-4,
            tau: 0.005,
            cql_alpha: 5.0,
            n_penalty_actions: 10,
            hidden_widths: vec![256, 256],
            batch_size: 256,
            train_steps: 10_000,
            entropy_coef: 0.2,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let fail = |m: &str| Err(PolicyError::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return fail("gamma must lie in [0, 1)");
        }
        if self.n_penalty_actions == 0 {
            return fail("n_penalty_actions must be at least 1");
        }
        if !(self.cql_alpha >= 0.0 && self.entropy_coef >= 0.0) {
            return fail("cql_alpha and entropy_coef must be non-negative");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail("tau must lie in (0, 1]");
        }
        if !(self.critic_lr > 0.0 && self.actor_lr > 0.0) {
            return fail("learning rates must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return fail("hidden_widths must be a non-empty list of positive widths");
        }
        Ok(())
    }
}

/// Input and output sizes shared by every network of a policy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyDims {
    pub state_dim: usize,
    pub action_dim: usize,
    pub latent_dim: usize,
    pub action_bound: f64,
}

impl PolicyDims {
    pub fn obs_dim(&self) -> usize {
        self.state_dim + self.latent_dim
    }

    pub fn critic_input(&self) -> usize {
        self.state_dim + self.action_dim + self.latent_dim
    }

    /// `log |A|` of the action box.
    pub fn log_box_volume(&self) -> f64 {
        self.action_dim as f64 * (2.0 * self.action_bound).ln()
    }
}

/// Actor, twin critics and their targets. Both critics and both targets
/// share the layer layout in `critic`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyState {
    pub config: PolicyConfig,
    pub dims: PolicyDims,
    pub actor: Mlp,
    pub actor_params: ParamSet,
    pub critic: Mlp,
    pub critics: [ParamSet; 2],
    pub targets: [ParamSet; 2],
}

impl PolicyState {
    pub fn new(config: &PolicyConfig, dims: PolicyDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = &config.hidden_widths;
        let sizes = |input: usize, output: usize| {
            let mut v = vec![input];
            v.extend_from_slice(widths);
            v.push(output);
            v
        };
        let mut actor_params = ParamSet::new();
        let actor = Mlp::new(
            &mut actor_params,
            "actor",
            &sizes(dims.obs_dim(), 2 * dims.action_dim),
            &mut rng,
        );
        let critic_sizes = sizes(dims.critic_input(), 1);
        let mut c1 = ParamSet::new();
        let critic = Mlp::new(&mut c1, "critic", &critic_sizes, &mut rng);
        let mut c2 = ParamSet::new();
        Mlp::new(&mut c2, "critic", &critic_sizes, &mut rng);
        Self {
            config: config.clone(),
            dims,
            actor,
            actor_params,
            critic,
            targets: [c1.clone(), c2.clone()],
            critics: [c1, c2],
        }
    }

    /// Critic `i` evaluated on rows of `[state | action | z]`.
    pub fn q_values(
        &self,
        critic: usize,
        states: &Array2<f64>,
        actions: &Array2<f64>,
        z: &Array2<f64>,
    ) -> Vec<f64> {
        let mut g = crate::nn::Graph::new();
        let p = g.bind_frozen(&self.critics[critic]);
        let x = g.constant(ndarray::concatenate![Axis(1), *states, *actions, *z]);
        let q = self.critic.forward(&mut g, &p, x);
        g.value(q).column(0).to_vec()
    }
}

/// Transitions of one or more tasks, each labelled with the frozen encoder's
/// representation of the current and the next step.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayData {
    pub dims: PolicyDims,
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array2<f64>,
    pub next_states: Array2<f64>,
    pub dones: Array2<f64>,
    pub z: Array2<f64>,
    pub z_next: Array2<f64>,
    pub task_index: Vec<usize>,
}

/// A sampled minibatch; rewards and dones are column vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBatch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array2<f64>,
    pub next_states: Array2<f64>,
    pub dones: Array2<f64>,
    pub z: Array2<f64>,
    pub z_next: Array2<f64>,
}

impl ReplayBatch {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ReplayData {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_tasks(&self) -> usize {
        let mut ids = self.task_index.clone();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// Checks that every array agrees with `dims` and with each other.
    pub fn validate(&self) -> Result<(), PolicyError> {
        let n = self.len();
        let d = &self.dims;
        let checks = [
            ("states", self.states.dim(), (n, d.state_dim)),
            ("actions", self.actions.dim(), (n, d.action_dim)),
            ("rewards", self.rewards.dim(), (n, 1)),
            ("next_states", self.next_states.dim(), (n, d.state_dim)),
            ("dones", self.dones.dim(), (n, 1)),
            ("z", self.z.dim(), (n, d.latent_dim)),
            ("z_next", self.z_next.dim(), (n, d.latent_dim)),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(PolicyError::Shape(format!(
                    "{name} has shape {got:?}, expected {want:?}"
                )));
            }
        }
        if self.task_index.len() != n {
            return Err(PolicyError::Shape(
                "task_index length differs from row count".to_string(),
            ));
        }
        Ok(())
    }

    pub fn concat(parts: &[ReplayData]) -> Result<ReplayData, PolicyError> {
        let first = parts
            .first()
            .ok_or_else(|| PolicyError::Shape("no replay data to join".to_string()))?;
        if parts.iter().any(|p| p.dims != first.dims) {
            return Err(PolicyError::EnvMismatch(
                "replay parts have different dimensions".to_string(),
            ));
        }
        let join = |f: fn(&ReplayData) -> &Array2<f64>| {
            let views: Vec<_> = parts.iter().map(|p| f(p).view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("validated widths")
        };
        Ok(ReplayData {
            dims: first.dims,
            states: join(|p| &p.states),
            actions: join(|p| &p.actions),
            rewards: join(|p| &p.rewards),
            next_states: join(|p| &p.next_states),
            dones: join(|p| &p.dones),
            z: join(|p| &p.z),
            z_next: join(|p| &p.z_next),
            task_index: parts
                .iter()
                .flat_map(|p| p.task_index.iter().copied())
                .collect(),
        })
    }

    pub fn batch(&self, rows: &[usize]) -> ReplayBatch {
        let pick = |a: &Array2<f64>| a.select(Axis(0), rows);
        ReplayBatch {
            states: pick(&self.states),
            actions: pick(&self.actions),
            rewards: pick(&self.rewards),
            next_states: pick(&self.next_states),
            dones: pick(&self.dones),
            z: pick(&self.z),
            z_next: pick(&self.z_next),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(PolicyConfig::default().validate().is_ok());
        for bad in [
            PolicyConfig {
                gamma: 1.0,
                ..Default::default()
            },
            PolicyConfig {
                n_penalty_actions: 0,
                ..Default::default()
            },
            PolicyConfig {
                cql_alpha: -1.0,
                ..Default::default()
            },
            PolicyConfig {
                hidden_widths: vec![],
                ..Default::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(PolicyError::Config(_))));
        }
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let err = toml::from_str::<PolicyConfig>("gamma = 0.9\nalpha_prime = 1.0\n");
        assert!(err.is_err());
        let ok: PolicyConfig = toml::from_str("gamma = 0.9\n").unwrap();
        assert_eq!(ok.gamma, 0.9);
        assert_eq!(ok.cql_alpha, 5.0);
    }

    #[test]
    fn twin_critics_start_different_targets_start_equal() {
        let dims = PolicyDims {
            state_dim: 3,
            action_dim: 1,
            latent_dim: 2,
            action_bound: 2.0,
        };
        let cfg = PolicyConfig {
            hidden_widths: vec![8],
            ..Default::default()
        };
        let st = PolicyState::new(&cfg, dims, 1);
        assert_ne!(st.critics[0], st.critics[1]);
        assert_eq!(st.targets[0], st.critics[0]);
        assert_eq!(st.targets[1], st.critics[1]);
        assert_eq!(st.critics[0].names(), st.critics[1].names());
    }
}
