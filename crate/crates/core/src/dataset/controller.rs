//! Scripted behavior controllers. Every training task gets its own gains,
//! exploration noise and action bias, so the data-collecting policy varies
//! with the task.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::EnvId;

/// Nominal gravity the pendulum controller assumes; it never sees the true value.
const NOMINAL_GRAVITY: f64 = 10.0;
/// cos θ above which the pendulum controller switches from pumping to balancing.
const BALANCE_COS: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerProfile {
    /// Pendulum: `[energy, kp, kd]`; point-mass and spring-cart: `[kp, kd]`.
    pub gains: Vec<f64>,
    pub noise_std: f64,
    pub bias: Vec<f64>,
}

impl ControllerProfile {
    pub fn nominal(env: EnvId) -> Self {
        let gains = match env {
            EnvId::PendulumGravity => vec![0.2, 10.0, 2.0],
            EnvId::PointmassDamping | EnvId::SpringcartMass => vec![2.0, 1.0],
        };
        Self {
            gains,
            noise_std: 0.0,
            bias: vec![0.0; env.action_dim()],
        }
    }

    /// Largest per-field absolute difference between two profiles.
    pub fn gap(&self, other: &ControllerProfile) -> f64 {
        let gains = self
            .gains
            .iter()
            .zip(&other.gains)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let bias = self
            .bias
            .iter()
            .zip(&other.bias)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        gains
            .max(bias)
            .max((self.noise_std - other.noise_std).abs())
    }

    /// `n` pairwise-distinct profiles: gain scales, noise levels and biases are
    /// taken from shuffled evenly spaced grids, so any two profiles differ by at
    /// least `min_gap(n)` in the bias field.
    pub fn family(env: EnvId, n: usize, seed: u64) -> Vec<ControllerProfile> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = |lo: f64, hi: f64, rng: &mut ChaCha8Rng| {
            let mut v: Vec<f64> = (0..n)
                .map(|i| {
                    if n == 1 {
                        (lo + hi) / 2.0
                    } else {
                        lo + (hi - lo) * i as f64 / (n - 1) as f64
                    }
                })
                .collect();
            v.shuffle(rng);
            v
        };
        let bound = env.action_bound();
        let scales = grid(0.6, 1.4, &mut rng);
        let noises = grid(0.05 * bound, 0.3 * bound, &mut rng);
        let biases = grid(-0.25 * bound, 0.25 * bound, &mut rng);
        let nominal = Self::nominal(env);
        (0..n)
            .map(|i| ControllerProfile {
                gains: nominal.gains.iter().map(|g| g * scales[i]).collect(),
                noise_std: noises[i],
                bias: vec![biases[i]; env.action_dim()],
            })
            .collect()
    }

    /// Guaranteed pairwise gap of [`ControllerProfile::family`] for `n` profiles.
    pub fn min_gap(env: EnvId, n: usize) -> f64 {
        if n < 2 {
            return f64::INFINITY;
        }
        0.5 * env.action_bound() / (n - 1) as f64
    }
}

/// Deterministic feedback law, before noise, bias and clipping.
pub fn feedback(env: EnvId, profile: &ControllerProfile, state: &[f64]) -> f64 {
    let g = &profile.gains;
    match env {
        EnvId::PendulumGravity => {
            let (c, s, w) = (state[0], state[1], state[2]);
            let theta = s.atan2(c);
            if c > BALANCE_COS {
                -g[1] * theta - g[2] * w
            } else {
                let energy = 0.5 * w * w + 1.5 * NOMINAL_GRAVITY * c;
                let target = 1.5 * NOMINAL_GRAVITY;
                let dir = if w >= 0.0 { 1.0 } else { -1.0 };
                g[0] * (target - energy) * dir
            }
        }
        EnvId::PointmassDamping => g[0] * (1.0 - state[0]) - g[1] * state[1],
        EnvId::SpringcartMass => -g[0] * state[0] - g[1] * state[1],
    }
}

/// Controller output plus Gaussian noise and bias, clipped to the action box.
pub fn behavior_action(
    env: EnvId,
    profile: &ControllerProfile,
    state: &[f64],
    rng: &mut impl Rng,
) -> Vec<f64> {
    let bound = env.action_bound();
    let base = feedback(env, profile, state);
    let noise = if profile.noise_std > 0.0 {
        Normal::new(0.0, profile.noise_std)
            .expect("finite noise std")
            .sample(rng)
    } else {
        0.0
    };
    profile
        .bias
        .iter()
        .map(|b| (base + noise + b).clamp(-bound, bound))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pd_at_goal_outputs_zero() {
        let p = ControllerProfile::nominal(EnvId::PointmassDamping);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            behavior_action(EnvId::PointmassDamping, &p, &[1.0, 0.0], &mut rng),
            vec![0.0]
        );
    }

    #[test]
    fn noiseless_is_repeatable() {
        let p = ControllerProfile::nominal(EnvId::PendulumGravity);
        let s = [-0.9, 0.4, 0.3];
        let a = behavior_action(
            EnvId::PendulumGravity,
            &p,
            &s,
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        let b = behavior_action(
            EnvId::PendulumGravity,
            &p,
            &s,
            &mut ChaCha8Rng::seed_from_u64(2),
        );
        assert_eq!(a, b);
    }

    #[test]
    fn bias_shifts_action_exactly() {
        let mut p = ControllerProfile::nominal(EnvId::SpringcartMass);
        let mut q = p.clone();
        p.bias = vec![0.1];
        q.bias = vec![-0.15];
        let s = [0.05, 0.02];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = behavior_action(EnvId::SpringcartMass, &p, &s, &mut rng)[0];
        let b = behavior_action(EnvId::SpringcartMass, &q, &s, &mut rng)[0];
        assert!(((a - b) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn family_profiles_are_distinct() {
        for env in EnvId::ALL {
            let fam = ControllerProfile::family(env, 10, 4);
            let gap = ControllerProfile::min_gap(env, 10);
            for i in 0..fam.len() {
                for j in i + 1..fam.len() {
                    assert!(fam[i].gap(&fam[j]) >= gap - 1e-12);
                }
            }
        }
    }

    #[test]
    fn pendulum_pumps_energy_from_rest_near_bottom() {
        let p = ControllerProfile::nominal(EnvId::PendulumGravity);
        let u = feedback(EnvId::PendulumGravity, &p, &[-1.0, 0.0, 0.1]);
        assert!(u > 0.0, "pushes along the direction of motion");
    }
}
