use std::path::Path;

use ndarray::{concatenate, Array2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::actor::{sample_frozen, sample_graph};
use super::cql::{critic_terms, draw_proposals};
use super::{PolicyConfig, PolicyError, PolicyState, ReplayBatch, ReplayData};
use crate::nn::{Adam, Graph};
use crate::report::{write_csv, CsvError};
use crate::rng::{derive_seed, stream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyLogRow {
    pub step: usize,
    pub critic_loss: f64,
    pub penalty: f64,
    pub actor_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedPolicy {
    pub state: PolicyState,
    pub log: Vec<PolicyLogRow>,
}

/// `r + γ(1 − done)(min_i Q̄_i(s′, a′, z′) − c·log π(a′|s′, z′))` with `a′`
/// drawn from the current actor.
pub(crate) fn bellman_targets(
    policy: &PolicyState,
    batch: &ReplayBatch,
    rng: &mut impl Rng,
) -> Array2<f64> {
    let cfg = &policy.config;
    let (a_next, lp_next) = sample_frozen(policy, &batch.next_states, &batch.z_next, rng);
    let x = concatenate![Axis(1), batch.next_states, a_next, batch.z_next];
    let q: Vec<Array2<f64>> = policy
        .targets
        .iter()
        .map(|t| {
            let mut g = Graph::new();
            let p = g.bind_frozen(t);
            let xin = g.constant(x.clone());
            let out = policy.critic.forward(&mut g, &p, xin);
            g.value(out).clone()
        })
        .collect();
    let mut y = Array2::zeros((batch.len(), 1));
    Zip::indexed(&mut y).for_each(|(r, c), y| {
        let soft = q[0][[r, c]].min(q[1][[r, c]]) - cfg.entropy_coef * lp_next[[r, 0]];
        *y = batch.rewards[[r, 0]] + cfg.gamma * (1.0 - batch.dones[[r, 0]]) * soft;
    });
    y
}

struct Optimizers {
    critics: [Adam; 2],
    actor: Adam,
}

/// Critic step on `MSE + cql_alpha·penalty` for each critic, then an actor
/// step against the frozen critics, then polyak target updates.
fn update(
    state: &mut PolicyState,
    opt: &mut Optimizers,
    batch: &ReplayBatch,
    rng: &mut impl Rng,
) -> Option<PolicyLogRow> {
    let cfg = state.config.clone();
    let y = bellman_targets(state, batch, rng);
    let k = cfg.n_penalty_actions;
    let props = draw_proposals(state, batch, k, k, rng);

    let mut critic_loss = 0.0;
    let mut penalty = 0.0;
    let mut critic_grads = Vec::with_capacity(2);
    for critic in &state.critics {
        let mut g = Graph::new();
        let p = g.bind(critic);
        let t = critic_terms(&mut g, &p, &state.critic, batch, &props);
        let target = g.constant(y.clone());
        let err = g.sub(t.q_data, target);
        let sq = g.square(err);
        let mse = g.mean(sq);
        let weighted = g.scale(t.penalty, cfg.cql_alpha);
        let loss = g.add(mse, weighted);
        critic_loss += g.scalar(loss) / 2.0;
        penalty += g.scalar(t.penalty) / 2.0;
        critic_grads.push(g.backward(loss).for_bound(&p));
    }

    let eps = Array2::from_shape_simple_fn((batch.len(), state.dims.action_dim), || {
        rng.sample(StandardNormal)
    });
    let mut g = Graph::new();
    let pa = g.bind(&state.actor_params);
    let obs = g.constant(concatenate![Axis(1), batch.states, batch.z]);
    let (a, lp) = sample_graph(&mut g, &pa, &state.actor, &state.dims, obs, &eps);
    let s = g.constant(batch.states.clone());
    let z = g.constant(batch.z.clone());
    let x = g.concat_cols(&[s, a, z]);
    let q: Vec<_> = state
        .critics
        .iter()
        .map(|c| {
            let pc = g.bind_frozen(c);
            state.critic.forward(&mut g, &pc, x)
        })
        .collect();
    let qmin = g.minimum(q[0], q[1]);
    let ent = g.scale(lp, cfg.entropy_coef);
    let obj = g.sub(ent, qmin);
    let actor_loss = g.mean(obj);
    let actor_grads = g.backward(actor_loss).for_bound(&pa);

    let row = PolicyLogRow {
        step: 0,
        critic_loss,
        penalty,
        actor_loss: g.scalar(actor_loss),
    };
    let finite = |gs: &[Array2<f64>]| gs.iter().all(|t| t.iter().all(|v| v.is_finite()));
    if ![row.critic_loss, row.penalty, row.actor_loss]
        .iter()
        .all(|v| v.is_finite())
        || !critic_grads.iter().all(|gs| finite(gs))
        || !finite(&actor_grads)
    {
        return None;
    }
    for (i, grads) in critic_grads.iter().enumerate() {
        opt.critics[i].step(&mut state.critics[i], grads);
    }
    opt.actor.step(&mut state.actor_params, &actor_grads);
    for i in 0..2 {
        let online = state.critics[i].clone();
        state.targets[i].polyak_from(&online, cfg.tau);
    }
    Some(row)
}

/// Trains actor and critics on labelled replay data drawn from at least two
/// tasks. Minibatches are sampled uniformly with replacement.
pub fn train_policy(
    data: &ReplayData,
    config: &PolicyConfig,
    seed: u64,
) -> Result<TrainedPolicy, PolicyError> {
    config.validate()?;
    data.validate()?;
    if data.n_tasks() < 2 {
        return Err(PolicyError::Config(format!(
            "policy training needs labelled data from at least 2 tasks, got {}",
            data.n_tasks()
        )));
    }
    let mut state = PolicyState::new(config, data.dims, derive_seed(seed, &[0]));
    let mut rng = stream(seed, &[1]);
    let mut opt = Optimizers {
        critics: [
            Adam::new(&state.critics[0], config.critic_lr),
            Adam::new(&state.critics[1], config.critic_lr),
        ],
        actor: Adam::new(&state.actor_params, config.actor_lr),
    };
    let mut log = Vec::with_capacity(config.train_steps);
    for step in 0..config.train_steps {
        let rows: Vec<usize> = (0..config.batch_size)
            .map(|_| rng.random_range(0..data.len()))
            .collect();
        let batch = data.batch(&rows);
        let before = state.clone();
        match update(&mut state, &mut opt, &batch, &mut rng) {
            Some(mut row) => {
                row.step = step;
                if step % 500 == 0 || step + 1 == config.train_steps {
                    log::info!(
                        "policy step {step}: critic {:.4} penalty {:.4} actor {:.4}",
                        row.critic_loss,
                        row.penalty,
                        row.actor_loss
                    );
                }
                log.push(row);
            }
            None => {
                return Err(PolicyError::Diverged {
                    step,
                    last_good: Box::new(before),
                    log,
                })
            }
        }
    }
    Ok(TrainedPolicy { state, log })
}

pub fn write_log_csv(
    path: &Path,
    meta: &serde_json::Value,
    log: &[PolicyLogRow],
) -> Result<(), CsvError> {
    write_csv(path, meta, log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyDims;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_data(n: usize, seed: u64) -> ReplayData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = |c: usize| Array2::from_shape_simple_fn((n, c), || rng.random_range(-1.0..1.0));
        ReplayData {
            dims: PolicyDims {
                state_dim: 2,
                action_dim: 1,
                latent_dim: 2,
                action_bound: 1.0,
            },
            states: m(2),
            actions: m(1),
            rewards: m(1),
            next_states: m(2),
            dones: Array2::zeros((n, 1)),
            z: m(2),
            z_next: m(2),
            task_index: (0..n).map(|i| i % 2).collect(),
        }
    }

    fn tiny(steps: usize) -> PolicyConfig {
        PolicyConfig {
            hidden_widths: vec![8, 8],
            batch_size: 16,
            train_steps: steps,
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let data = random_data(50, 1);
        let out = train_policy(&data, &tiny(0), 7).unwrap();
        assert!(out.log.is_empty());
        assert_eq!(
            out.state,
            PolicyState::new(&tiny(0), data.dims, derive_seed(7, &[0]))
        );
    }

    #[test]
    fn fixed_seed_reproduces_log() {
        let data = random_data(80, 2);
        let a = train_policy(&data, &tiny(15), 3).unwrap();
        let b = train_policy(&data, &tiny(15), 3).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.state, b.state);
        let c = train_policy(&data, &tiny(15), 4).unwrap();
        assert_ne!(a.log, c.log);
    }

    #[test]
    fn targets_trail_online_exactly() {
        let data = random_data(60, 3);
        let cfg = tiny(1);
        let mut state = PolicyState::new(&cfg, data.dims, 1);
        let mut opt = Optimizers {
            critics: [
                Adam::new(&state.critics[0], 1e-2),
                Adam::new(&state.critics[1], 1e-2),
            ],
            actor: Adam::new(&state.actor_params, 1e-2),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..3 {
            let prev = state.targets.clone();
            let batch = data.batch(&[0, 5, 9, 20]);
            update(&mut state, &mut opt, &batch, &mut rng).unwrap();
            for i in 0..2 {
                let online = state.critics[i].flatten();
                let want: Vec<f64> = prev[i]
                    .flatten()
                    .iter()
                    .zip(&online)
                    .map(|(t, o)| cfg.tau * o + (1.0 - cfg.tau) * t)
                    .collect();
                assert_eq!(state.targets[i].flatten(), want);
            }
        }
    }

    #[test]
    fn bellman_target_respects_done() {
        let data = random_data(10, 4);
        let mut cfg = tiny(0);
        cfg.gamma = 0.9;
        let st = PolicyState::new(&cfg, data.dims, 2);
        let mut batch = data.batch(&[0, 1, 2]);
        batch.dones.fill(1.0);
        let y = bellman_targets(&st, &batch, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(y, batch.rewards);
    }

    #[test]
    fn single_task_is_rejected() {
        let mut data = random_data(20, 5);
        data.task_index = vec![0; 20];
        assert!(matches!(
            train_policy(&data, &tiny(1), 0),
            Err(PolicyError::Config(_))
        ));
    }

    #[test]
    fn divergence_returns_last_good_state() {
        let mut data = random_data(20, 6);
        data.rewards.fill(f64::NAN);
        let cfg = PolicyConfig {
            batch_size: 20,
            ..tiny(5)
        };
        match train_policy(&data, &cfg, 0) {
            Err(PolicyError::Diverged {
                step,
                last_good,
                log,
            }) => {
                assert_eq!(step, 0);
                assert!(log.is_empty());
                assert!(last_good.critics[0].all_finite());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
