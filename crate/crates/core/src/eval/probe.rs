//! Latent scatter exports, task retrieval and the behavior-policy probe.

use serde::{Deserialize, Serialize};

use super::stats::{best_abs_spearman, logistic_probe_accuracy, one_nn_accuracy, ProbeSettings};
use super::{run_adaptation, ActionSource, ContextEncoder, EvalError};
use crate::dataset::{generate_dataset, ControllerProfile, TaskDataset};
use crate::dynamics::{DynamicsSpec, EnvId, Regime, RegimeSampler, Schedule};
use crate::encoder::{sample_window, TrajectorySegment};
use crate::rng::{derive_seed, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub z1: f64,
    pub z2: f64,
    pub mu: f64,
}

fn scatter_row(z: &[f64], mu: f64) -> ScatterRow {
    ScatterRow {
        z1: z.first().copied().unwrap_or(0.0),
        z2: z.get(1).copied().unwrap_or(0.0),
        mu,
    }
}

fn warn_if_not_planar(encoder: &dyn ContextEncoder) {
    if encoder.latent_dim() != 2 {
        log::warn!(
            "latent dimension is {}; exporting the first two coordinates",
            encoder.latent_dim()
        );
    }
}

/// Final latent mean of `n_segments` short episodes of `segment_len` steps,
/// each in a freshly drawn task and driven by `actor`.
pub fn representation_scatter(
    encoder: &dyn ContextEncoder,
    actor: &dyn ActionSource,
    env: EnvId,
    regime: Regime,
    n_segments: usize,
    segment_len: usize,
    seed: u64,
) -> Result<Vec<ScatterRow>, EvalError> {
    warn_if_not_planar(encoder);
    let mut rows = Vec::with_capacity(n_segments);
    for i in 0..n_segments {
        let mut sampler = RegimeSampler::new(regime, derive_seed(seed, &[i as u64, 0]));
        let spec = sampler.sample_dynamics(env);
        let out = run_adaptation(
            encoder,
            actor,
            &Schedule::stationary(spec),
            segment_len,
            derive_seed(seed, &[i as u64, 1]),
        )?;
        let last = out
            .track
            .rows
            .last()
            .map(|r| r.z.clone())
            .unwrap_or_default();
        rows.push(scatter_row(&last, spec.mu));
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalReport {
    pub one_nn_accuracy: f64,
    pub abs_spearman: f64,
    pub rows: Vec<ScatterRow>,
}

/// Windows sampled uniformly from held-out datasets of known tasks: 1-NN task
/// retrieval accuracy and the best per-coordinate `|ρ|` against `mu`.
pub fn task_retrieval(
    encoder: &dyn ContextEncoder,
    datasets: &[TaskDataset],
    windows_per_task: usize,
    seed: u64,
) -> Result<RetrievalReport, EvalError> {
    warn_if_not_planar(encoder);
    let mut rng = stream(seed, &[0x4e]);
    let mut windows = Vec::with_capacity(datasets.len() * windows_per_task);
    let mut labels = Vec::with_capacity(windows.capacity());
    let mut mus = Vec::with_capacity(windows.capacity());
    for (label, d) in datasets.iter().enumerate() {
        let task = d.offline();
        for _ in 0..windows_per_task {
            windows.push(sample_window(&task, encoder.history_len(), &mut rng));
            labels.push(label);
            mus.push(d.spec.mu);
        }
    }
    let z = encoder.encode_windows(&windows)?;
    Ok(RetrievalReport {
        one_nn_accuracy: one_nn_accuracy(&z, &labels),
        abs_spearman: best_abs_spearman(&z, &mus),
        rows: z
            .iter()
            .zip(&mus)
            .map(|(v, &mu)| scatter_row(v, mu))
            .collect(),
    })
}

/// Three dynamics settings crossed with two controllers that share gains but
/// differ in exploration noise and in the sign of a constant action bias.
/// Tasks with the same dynamics differ only in their behavior policy.
pub fn shared_dynamics_corpus(env: EnvId) -> (Vec<DynamicsSpec>, Vec<ControllerProfile>) {
    let bound = env.action_bound();
    let nominal = ControllerProfile::nominal(env);
    let specs = [-1.0, 0.0, 1.0]
        .iter()
        .map(|&mu| DynamicsSpec::new(env, mu))
        .collect();
    let profiles = vec![
        ControllerProfile {
            noise_std: 0.05 * bound,
            bias: vec![0.3 * bound; env.action_dim()],
            ..nominal.clone()
        },
        ControllerProfile {
            noise_std: 0.3 * bound,
            bias: vec![-0.3 * bound; env.action_dim()],
            ..nominal
        },
    ];
    (specs, profiles)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DebiasProbeConfig {
    /// Transitions generated per (task, profile) pair.
    pub transitions_per_pair: usize,
    pub windows_per_pair: usize,
    pub probe_iterations: usize,
    pub probe_learning_rate: f64,
}

impl Default for DebiasProbeConfig {
    fn default() -> Self {
        Self {
            transitions_per_pair: 2000,
            windows_per_pair: 150,
            probe_iterations: 2000,
            probe_learning_rate: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DebiasRow {
    pub z1: f64,
    pub z2: f64,
    pub task: usize,
    pub profile: usize,
    pub mu: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub task_accuracy: f64,
    pub policy_accuracy: f64,
    pub rows: Vec<DebiasRow>,
}

/// Rolls every (task, profile) pair with its scripted controller, encodes
/// windows of the rollouts, and fits one linear probe for task identity and
/// one for controller identity on an 80/20 split.
pub fn debias_probe(
    encoder: &dyn ContextEncoder,
    profiles: &[ControllerProfile],
    specs: &[DynamicsSpec],
    config: &DebiasProbeConfig,
    seed: u64,
) -> Result<ProbeReport, EvalError> {
    if profiles.len() < 2 || specs.len() < 2 {
        return Err(EvalError::TooFewClasses(format!(
            "{} profiles, {} tasks",
            profiles.len(),
            specs.len()
        )));
    }
    let mut rng = stream(seed, &[0xde]);
    let mut windows: Vec<TrajectorySegment> = Vec::new();
    let mut meta = Vec::new();
    for (si, spec) in specs.iter().enumerate() {
        for (pi, profile) in profiles.iter().enumerate() {
            let pair_seed = derive_seed(seed, &[si as u64, pi as u64]);
            let data = generate_dataset(si, spec, profile, config.transitions_per_pair, pair_seed)?;
            let task = data.offline();
            for _ in 0..config.windows_per_pair {
                windows.push(sample_window(&task, encoder.history_len(), &mut rng));
                meta.push((si, pi, spec.mu));
            }
        }
    }
    let z = encoder.encode_windows(&windows)?;
    let settings = ProbeSettings {
        iterations: config.probe_iterations,
        learning_rate: config.probe_learning_rate,
        ..ProbeSettings::default()
    };
    let task_labels: Vec<usize> = meta.iter().map(|m| m.0).collect();
    let policy_labels: Vec<usize> = meta.iter().map(|m| m.1).collect();
    Ok(ProbeReport {
        task_accuracy: logistic_probe_accuracy(&z, &task_labels, &settings, seed),
        policy_accuracy: logistic_probe_accuracy(&z, &policy_labels, &settings, seed),
        rows: z
            .iter()
            .zip(&meta)
            .map(|(v, &(task, profile, mu))| DebiasRow {
                z1: v.first().copied().unwrap_or(0.0),
                z2: v.get(1).copied().unwrap_or(0.0),
                task,
                profile,
                mu,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::stubs::{ConstantEncoder, WindowFnEncoder, ZeroActor};

    fn two_profiles(env: EnvId) -> Vec<ControllerProfile> {
        let bound = env.action_bound();
        let nominal = ControllerProfile::nominal(env);
        vec![
            ControllerProfile {
                noise_std: 0.05 * bound,
                bias: vec![0.3 * bound],
                ..nominal.clone()
            },
            ControllerProfile {
                noise_std: 0.05 * bound,
                bias: vec![-0.3 * bound],
                ..nominal
            },
        ]
    }

    /// Recovers the spring-cart mass from one transition: `Δv = dt·(u − k·x)/m`.
    fn mass_from_window(pairs: &[Vec<f64>]) -> Vec<f64> {
        let n = pairs.len();
        if n < 2 {
            return vec![0.0];
        }
        let (prev, cur) = (&pairs[n - 2], &pairs[n - 1]);
        let (x, v) = (prev[1], prev[2]);
        let (u, v_next) = (cur[0], cur[2]);
        let force = u - 4.0 * x;
        let dv = v_next - v;
        if dv.abs() < 1e-9 {
            return vec![0.0];
        }
        vec![(crate::dynamics::DT * force / dv).ln()]
    }

    #[test]
    fn dynamics_oracle_identifies_tasks_not_controllers() {
        let env = EnvId::SpringcartMass;
        let specs = vec![DynamicsSpec::new(env, -1.0), DynamicsSpec::new(env, 1.0)];
        let enc = WindowFnEncoder {
            history_len: 4,
            latent_dim: 1,
            f: mass_from_window,
        };
        let cfg = DebiasProbeConfig {
            transitions_per_pair: 400,
            windows_per_pair: 60,
            probe_iterations: 500,
            ..Default::default()
        };
        let r = debias_probe(&enc, &two_profiles(env), &specs, &cfg, 3).unwrap();
        assert!(r.task_accuracy > 0.95, "{}", r.task_accuracy);
        assert!(r.policy_accuracy < 0.7, "{}", r.policy_accuracy);
    }

    #[test]
    fn action_residual_encoder_identifies_controllers() {
        let env = EnvId::SpringcartMass;
        let specs = vec![DynamicsSpec::new(env, -1.0), DynamicsSpec::new(env, 1.0)];
        let enc = WindowFnEncoder {
            history_len: 4,
            latent_dim: 1,
            // Mean residual of each action against the shared feedback law: the bias.
            f: |pairs: &[Vec<f64>]| {
                let nominal = ControllerProfile::nominal(EnvId::SpringcartMass);
                let res: Vec<f64> = pairs
                    .windows(2)
                    .map(|w| {
                        w[1][0]
                            - crate::dataset::feedback(EnvId::SpringcartMass, &nominal, &w[0][1..])
                    })
                    .collect();
                vec![res.iter().sum::<f64>() / res.len().max(1) as f64]
            },
        };
        let cfg = DebiasProbeConfig {
            transitions_per_pair: 400,
            windows_per_pair: 60,
            probe_iterations: 500,
            ..Default::default()
        };
        let r = debias_probe(&enc, &two_profiles(env), &specs, &cfg, 4).unwrap();
        assert!(r.policy_accuracy > 0.9, "{}", r.policy_accuracy);
    }

    #[test]
    fn one_profile_is_rejected() {
        let env = EnvId::SpringcartMass;
        let enc = ConstantEncoder::new(4, vec![0.0]);
        let specs = vec![DynamicsSpec::new(env, -1.0), DynamicsSpec::new(env, 1.0)];
        let r = debias_probe(
            &enc,
            &two_profiles(env)[..1],
            &specs,
            &DebiasProbeConfig::default(),
            0,
        );
        assert!(matches!(r, Err(EvalError::TooFewClasses(_))));
    }

    #[test]
    fn constant_encoder_gives_flat_scatter() {
        let enc = ConstantEncoder::new(8, vec![0.4, -0.2]);
        let rows = representation_scatter(
            &enc,
            &ZeroActor(1),
            EnvId::PendulumGravity,
            Regime::Iid,
            200,
            16,
            1,
        )
        .unwrap();
        assert_eq!(rows.len(), 200);
        assert!(rows.iter().all(|r| r.z1 == 0.4 && r.z2 == -0.2));
        let mus: Vec<f64> = rows.iter().map(|r| r.mu).collect();
        assert!(mus.iter().any(|&m| m != mus[0]));
    }
}
