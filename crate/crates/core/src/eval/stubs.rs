//! Reference encoders and actors with fixed, analyzable behavior.

use super::{ActionSource, ContextEncoder, EvalError};
use crate::dataset::{feedback, ControllerProfile};
use crate::dynamics::EnvId;
use crate::encoder::TrajectorySegment;

/// Emits the same code for every window.
#[derive(Clone, Debug)]
pub struct ConstantEncoder {
    pub history_len: usize,
    pub code: Vec<f64>,
}

impl ConstantEncoder {
    pub fn new(history_len: usize, code: Vec<f64>) -> Self {
        Self { history_len, code }
    }
}

impl ContextEncoder for ConstantEncoder {
    fn history_len(&self) -> usize {
        self.history_len
    }

    fn latent_dim(&self) -> usize {
        self.code.len()
    }

    fn encode_windows(&self, windows: &[TrajectorySegment]) -> Result<Vec<Vec<f64>>, EvalError> {
        Ok(vec![self.code.clone(); windows.len()])
    }
}

/// Applies a function to the valid (non-padding) pairs of each window.
pub struct WindowFnEncoder<F> {
    pub history_len: usize,
    pub latent_dim: usize,
    pub f: F,
}

impl<F: Fn(&[Vec<f64>]) -> Vec<f64>> ContextEncoder for WindowFnEncoder<F> {
    fn history_len(&self) -> usize {
        self.history_len
    }

    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn encode_windows(&self, windows: &[TrajectorySegment]) -> Result<Vec<Vec<f64>>, EvalError> {
        Ok(windows
            .iter()
            .map(|w| {
                let pairs = w.pairs();
                (self.f)(&pairs[pairs.len() - w.valid_len()..])
            })
            .collect())
    }
}

/// Always outputs a zero action of the given width.
#[derive(Clone, Copy, Debug)]
pub struct ZeroActor(pub usize);

impl ActionSource for ZeroActor {
    fn act(&self, _observation: &[f64], _z: &[f64]) -> Vec<f64> {
        vec![0.0; self.0]
    }
}

/// Noise-free scripted controller that ignores the code.
#[derive(Clone, Debug)]
pub struct ControllerActor {
    pub env: EnvId,
    pub profile: ControllerProfile,
}

impl ControllerActor {
    pub fn nominal(env: EnvId) -> Self {
        Self {
            env,
            profile: ControllerProfile::nominal(env),
        }
    }
}

impl ActionSource for ControllerActor {
    fn act(&self, observation: &[f64], _z: &[f64]) -> Vec<f64> {
        let bound = self.env.action_bound();
        let base = feedback(self.env, &self.profile, observation);
        vec![(base + self.profile.bias[0]).clamp(-bound, bound)]
    }
}
