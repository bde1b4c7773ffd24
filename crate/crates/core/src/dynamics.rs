//! Desk-scale continuous-control systems whose transition law is scaled by
//! `1.5^mu`, plus samplers for the IID, OOD and non-stationary task regimes.
//!
//! All three systems share a two-dimensional physical state (position,
//! velocity), a one-dimensional force or torque action, and a reward that is
//! identical across tasks of the same family. Only one physical constant
//! changes between tasks.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Integration step in seconds.
pub const DT: f64 = 0.05;
/// Episode length; there is no early termination.
pub const HORIZON: usize = 200;
/// Base of the perturbation: `multiplier = PERTURBATION_BASE^mu`.
pub const PERTURBATION_BASE: f64 = 1.5;
/// Largest |mu| produced by any regime.
pub const MU_LIMIT: f64 = 1.8;

const PENDULUM_MASS: f64 = 1.0;
const PENDULUM_LENGTH: f64 = 1.0;
const POINTMASS_MASS: f64 = 1.0;
const POINTMASS_GOAL: f64 = 1.0;
const SPRING_STIFFNESS: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("unknown environment id `{0}` (expected pendulum-gravity, pointmass-damping or springcart-mass)")]
    UnknownEnv(String),
    #[error("unknown regime `{0}` (expected IID, OOD or NONSTATIONARY)")]
    UnknownRegime(String),
    #[error("action must be finite and have {expected} entries, got {got:?}")]
    BadAction { expected: usize, got: Vec<f64> },
    #[error("simulation diverged at step {step}")]
    Diverged { step: usize },
    #[error("switch interval must be at least 1")]
    BadSwitchInterval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvId {
    PendulumGravity,
    PointmassDamping,
    SpringcartMass,
}

impl EnvId {
    pub const ALL: [EnvId; 3] = [
        EnvId::PendulumGravity,
        EnvId::PointmassDamping,
        EnvId::SpringcartMass,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnvId::PendulumGravity => "pendulum-gravity",
            EnvId::PointmassDamping => "pointmass-damping",
            EnvId::SpringcartMass => "springcart-mass",
        }
    }

    /// Unperturbed value of the varied constant: gravity (m/s²), damping (N·s/m) or mass (kg).
    pub fn default_constant(self) -> f64 {
        match self {
            EnvId::PendulumGravity => 10.0,
            EnvId::PointmassDamping => 1.0,
            EnvId::SpringcartMass => 1.0,
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            EnvId::PendulumGravity => 3,
            EnvId::PointmassDamping | EnvId::SpringcartMass => 2,
        }
    }

    pub fn action_dim(self) -> usize {
        1
    }

    /// Symmetric action box `[-bound, bound]` per dimension.
    pub fn action_bound(self) -> f64 {
        match self {
            EnvId::PendulumGravity => 2.0,
            EnvId::PointmassDamping | EnvId::SpringcartMass => 1.0,
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvId {
    type Err = DynamicsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EnvId::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| DynamicsError::UnknownEnv(s.to_string()))
    }
}

/// One concrete task: an environment family with its varied constant scaled by `1.5^mu`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSpec {
    pub env_id: EnvId,
    pub mu: f64,
    pub multiplier: f64,
    pub base_value: f64,
}

impl DynamicsSpec {
    pub fn new(env_id: EnvId, mu: f64) -> Self {
        let multiplier = PERTURBATION_BASE.powf(mu);
        Self {
            env_id,
            mu,
            multiplier,
            base_value: env_id.default_constant() * multiplier,
        }
    }

    /// `mu` mapped linearly from `[-1.8, 1.8]` onto `[0, 1]`.
    pub fn normalized_mu(&self) -> f64 {
        (self.mu + MU_LIMIT) / (2.0 * MU_LIMIT)
    }

    /// Angular acceleration contributed by gravity alone at angle `theta` (0 = upright).
    /// Zero for the other families.
    pub fn gravity_acceleration(&self, theta: f64) -> f64 {
        match self.env_id {
            EnvId::PendulumGravity => 3.0 * self.base_value / (2.0 * PENDULUM_LENGTH) * theta.sin(),
            _ => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "IID")]
    Iid,
    #[serde(rename = "OOD")]
    Ood,
    #[serde(rename = "NONSTATIONARY")]
    Nonstationary,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Iid => "IID",
            Regime::Ood => "OOD",
            Regime::Nonstationary => "NONSTATIONARY",
        })
    }
}

impl FromStr for Regime {
    type Err = DynamicsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "IID" => Ok(Regime::Iid),
            "OOD" => Ok(Regime::Ood),
            "NONSTATIONARY" | "NON-STATIONARY" => Ok(Regime::Nonstationary),
            _ => Err(DynamicsError::UnknownRegime(s.to_string())),
        }
    }
}

/// Seeded sampler of task exponents for one regime.
#[derive(Clone, Debug)]
pub struct RegimeSampler {
    pub regime: Regime,
    pub iid_halfwidth: f64,
    pub ood_halfwidth: f64,
    pub switch_interval: usize,
    pub rng_seed: u64,
    rng: ChaCha8Rng,
}

impl RegimeSampler {
    pub fn new(regime: Regime, rng_seed: u64) -> Self {
        Self {
            regime,
            iid_halfwidth: 1.5,
            ood_halfwidth: MU_LIMIT,
            switch_interval: 50,
            rng_seed,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        }
    }

    pub fn with_switch_interval(mut self, interval: usize) -> Self {
        self.switch_interval = interval;
        self
    }

    pub fn sample_mu(&mut self) -> f64 {
        match self.regime {
            Regime::Iid => self
                .rng
                .random_range(-self.iid_halfwidth..=self.iid_halfwidth),
            Regime::Ood => {
                let magnitude = self
                    .rng
                    .random_range(self.iid_halfwidth..=self.ood_halfwidth);
                if self.rng.random_bool(0.5) {
                    magnitude
                } else {
                    -magnitude
                }
            }
            Regime::Nonstationary => self
                .rng
                .random_range(-self.ood_halfwidth..=self.ood_halfwidth),
        }
    }

    pub fn sample_dynamics(&mut self, env_id: EnvId) -> DynamicsSpec {
        DynamicsSpec::new(env_id, self.sample_mu())
    }

    /// Piecewise-constant schedule whose spec changes at every multiple of
    /// `switch_interval`, starting at step 0.
    pub fn schedule_nonstationary(
        &mut self,
        env_id: EnvId,
        episode_length: usize,
    ) -> Result<Schedule, DynamicsError> {
        if self.switch_interval == 0 {
            return Err(DynamicsError::BadSwitchInterval);
        }
        let segments = (0..episode_length.max(1))
            .step_by(self.switch_interval)
            .map(|start| (start, self.sample_dynamics(env_id)))
            .collect();
        Ok(Schedule { segments })
    }
}

/// Training tasks drawn one per equal-width stratum of the IID support, so
/// that no two training tasks are accidentally near-identical.
pub fn stratified_iid_tasks(env_id: EnvId, n: usize, seed: u64) -> Vec<DynamicsSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let halfwidth = 1.5;
    let width = 2.0 * halfwidth / n as f64;
    (0..n)
        .map(|i| {
            let lo = -halfwidth + width * i as f64;
            DynamicsSpec::new(env_id, rng.random_range(lo..lo + width))
        })
        .collect()
}

/// Dynamics that switch at fixed steps within one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub segments: Vec<(usize, DynamicsSpec)>,
}

impl Schedule {
    pub fn stationary(spec: DynamicsSpec) -> Self {
        Self {
            segments: vec![(0, spec)],
        }
    }

    pub fn env_id(&self) -> EnvId {
        self.segments[0].1.env_id
    }

    /// Spec governing the transition that starts at `step`.
    pub fn spec_at(&self, step: usize) -> &DynamicsSpec {
        let idx = self.segments.partition_point(|(start, _)| *start <= step);
        &self.segments[idx.saturating_sub(1)].1
    }

    /// Steps at which the spec changes (excluding step 0).
    pub fn switch_steps(&self) -> Vec<usize> {
        self.segments.iter().skip(1).map(|(s, _)| *s).collect()
    }

    /// `start_step,mu` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("start_step,mu\n");
        for (start, spec) in &self.segments {
            out.push_str(&format!("{start},{}\n", spec.mu));
        }
        out
    }
}

/// Observable and internal state of one running episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub observation: Vec<f64>,
    pub step_index: usize,
    pub episode_return: f64,
    pub horizon: usize,
    position: f64,
    velocity: f64,
}

impl EnvState {
    pub fn position(&self) -> f64 {
        self.position
    }

    pub fn velocity(&self) -> f64 {
        self.velocity
    }
}

/// Result of one call to [`step`].
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
}

fn observe(env_id: EnvId, position: f64, velocity: f64) -> Vec<f64> {
    match env_id {
        EnvId::PendulumGravity => vec![position.cos(), position.sin(), velocity],
        _ => vec![position, velocity],
    }
}

fn wrap_angle(theta: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut t = (theta + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if t <= -std::f64::consts::PI {
        t += two_pi;
    }
    t
}

/// Initial state for `spec` with the default horizon.
pub fn reset(spec: &DynamicsSpec, seed: u64) -> EnvState {
    reset_with_horizon(spec, seed, HORIZON)
}

pub fn reset_with_horizon(spec: &DynamicsSpec, seed: u64, horizon: usize) -> EnvState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (position, velocity) = match spec.env_id {
        EnvId::PendulumGravity => (
            wrap_angle(std::f64::consts::PI + rng.random_range(-0.2..0.2)),
            rng.random_range(-0.1..0.1),
        ),
        EnvId::PointmassDamping => (rng.random_range(-1.0..0.0), rng.random_range(-0.1..0.1)),
        EnvId::SpringcartMass => (rng.random_range(-1.0..1.0), rng.random_range(-0.1..0.1)),
    };
    EnvState {
        observation: observe(spec.env_id, position, velocity),
        step_index: 0,
        episode_return: 0.0,
        horizon,
        position,
        velocity,
    }
}

/// Reward of taking `action` in the pre-step state.
pub fn reward(env_id: EnvId, position: f64, velocity: f64, action: f64) -> f64 {
    match env_id {
        EnvId::PendulumGravity => {
            let th = wrap_angle(position);
            -(th * th + 0.1 * velocity * velocity + 0.001 * action * action)
        }
        EnvId::PointmassDamping => -(position - POINTMASS_GOAL).abs(),
        EnvId::SpringcartMass => -(position * position + 0.01 * action * action),
    }
}

/// Advances one semi-implicit Euler step under `spec`.
///
/// The action is clipped to the family's box before use.
pub fn step(
    state: &EnvState,
    spec: &DynamicsSpec,
    action: &[f64],
) -> Result<StepOutcome, DynamicsError> {
    let env_id = spec.env_id;
    if action.len() != env_id.action_dim() || action.iter().any(|a| !a.is_finite()) {
        return Err(DynamicsError::BadAction {
            expected: env_id.action_dim(),
            got: action.to_vec(),
        });
    }
    let bound = env_id.action_bound();
    let u = action[0].clamp(-bound, bound);
    let (x, v) = (state.position, state.velocity);

    let accel = match env_id {
        EnvId::PendulumGravity => {
            spec.gravity_acceleration(x) + 3.0 / (PENDULUM_MASS * PENDULUM_LENGTH.powi(2)) * u
        }
        EnvId::PointmassDamping => (u - spec.base_value * v) / POINTMASS_MASS,
        EnvId::SpringcartMass => (u - SPRING_STIFFNESS * x) / spec.base_value,
    };
    let v_next = v + accel * DT;
    let mut x_next = x + v_next * DT;
    if env_id == EnvId::PendulumGravity {
        x_next = wrap_angle(x_next);
    }
    if !x_next.is_finite() || !v_next.is_finite() {
        return Err(DynamicsError::Diverged {
            step: state.step_index,
        });
    }

    let r = reward(env_id, x, v, u);
    let step_index = state.step_index + 1;
    Ok(StepOutcome {
        state: EnvState {
            observation: observe(env_id, x_next, v_next),
            step_index,
            episode_return: state.episode_return + r,
            horizon: state.horizon,
            position: x_next,
            velocity: v_next,
        },
        reward: r,
        done: step_index >= state.horizon,
    })
}
