//! Run configuration: a TOML file with one table per stage.

use std::path::{Path, PathBuf};

use dora::dynamics::EnvId;
use dora::encoder::EncoderConfig;
use dora::eval::{DebiasProbeConfig, EvalConfig};
use dora::policy::PolicyConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub results_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("runs/data"),
            checkpoint_dir: PathBuf::from("runs/checkpoints"),
            results_dir: PathBuf::from("runs/results"),
        }
    }
}

impl Paths {
    /// All three directories under one root.
    pub fn under(root: &Path) -> Self {
        Self {
            data_dir: root.join("data"),
            checkpoint_dir: root.join("checkpoints"),
            results_dir: root.join("results"),
        }
    }

    pub fn encoder_dir(&self) -> PathBuf {
        self.checkpoint_dir.join("encoder")
    }

    pub fn policy_dir(&self) -> PathBuf {
        self.checkpoint_dir.join("policy")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_tasks: usize,
    pub transitions_per_task: usize,
    /// Per-task held-out transitions used by the retrieval diagnostics.
    pub heldout_transitions: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_tasks: 10,
            transitions_per_task: 20_000,
            heldout_transitions: 2_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub track_episodes: usize,
    pub scatter_segments: usize,
    pub scatter_segment_len: usize,
    pub retrieval_windows_per_task: usize,
    pub debias: DebiasProbeConfig,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            track_episodes: 10,
            scatter_segments: 200,
            scatter_segment_len: 50,
            retrieval_windows_per_task: 200,
            debias: DebiasProbeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env_id: EnvId,
    pub global_seed: u64,
    pub paths: Paths,
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub policy: PolicyConfig,
    pub eval: EvalConfig,
    pub diagnostics: DiagnosticsConfig,
}

impl Default for RunConfig {
    /// Single-core preset for the pendulum: full encoder widths, narrow critics.
    fn default() -> Self {
        Self {
            env_id: EnvId::PendulumGravity,
            global_seed: 0,
            paths: Paths::default(),
            data: DataConfig::default(),
            encoder: EncoderConfig::default(),
            policy: PolicyConfig {
                hidden_widths: vec![64, 64],
                train_steps: 3_000,
                ..PolicyConfig::default()
            },
            eval: EvalConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let config: Self =
            toml::from_str(text).map_err(|e| CliError::User(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::User(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| CliError::User(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes to JSON")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let user = |e: String| CliError::User(e);
        if self.data.n_tasks < 2 {
            return Err(user("data.n_tasks must be at least 2".into()));
        }
        if self.data.transitions_per_task < dora::dynamics::HORIZON
            || self.data.heldout_transitions < dora::dynamics::HORIZON
        {
            return Err(user(format!(
                "data transition counts must be at least one episode ({} steps)",
                dora::dynamics::HORIZON
            )));
        }
        self.encoder.validate().map_err(|e| user(e.to_string()))?;
        self.policy.validate().map_err(|e| user(e.to_string()))?;
        self.eval.validate().map_err(|e| user(e.to_string()))?;
        let d = &self.diagnostics;
        if d.track_episodes == 0
            || d.scatter_segments == 0
            || d.scatter_segment_len == 0
            || d.retrieval_windows_per_task < 2
        {
            return Err(user(
                "diagnostics sizes must be positive (retrieval needs 2 windows per task)".into(),
            ));
        }
        Ok(())
    }
}
