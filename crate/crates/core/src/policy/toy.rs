//! Two-state MDP whose outcome depends only on the sign of a 1-D action.
//! Positive actions switch state, non-positive actions stay. Used as a
//! sanity fixture for the critic.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PolicyConfig, PolicyDims, PolicyState, ReplayData};

pub const TOY_GAMMA: f64 = 0.5;

fn reward(state: usize, positive: bool) -> f64 {
    match (state, positive) {
        (0, true) => 1.0,
        (0, false) => 0.0,
        (1, true) => 0.0,
        _ => 0.5,
    }
}

fn next(state: usize, positive: bool) -> usize {
    if positive {
        1 - state
    } else {
        state
    }
}

/// Exact `Q[state][positive]` by value iteration.
pub fn toy_value_iteration() -> [[f64; 2]; 2] {
    let mut v = [0.0; 2];
    for _ in 0..200 {
        let q = |s: usize, p: bool| reward(s, p) + TOY_GAMMA * v[next(s, p)];
        v = [q(0, true).max(q(0, false)), q(1, true).max(q(1, false))];
    }
    let q = |s: usize, p: bool| reward(s, p) + TOY_GAMMA * v[next(s, p)];
    [[q(0, false), q(0, true)], [q(1, false), q(1, true)]]
}

fn one_hot(s: usize) -> [f64; 2] {
    if s == 0 {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    }
}

/// `support(state)` gives the interval actions are drawn from in that state.
pub fn toy_dataset(n: usize, seed: u64, support: impl Fn(usize) -> (f64, f64)) -> ReplayData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Array2::zeros((n, 2));
    let mut actions = Array2::zeros((n, 1));
    let mut rewards = Array2::zeros((n, 1));
    let mut next_states = Array2::zeros((n, 2));
    for i in 0..n {
        let s = rng.random_range(0..2);
        let (lo, hi) = support(s);
        let a: f64 = rng.random_range(lo..hi);
        let positive = a > 0.0;
        states.row_mut(i).assign(&ndarray::arr1(&one_hot(s)));
        actions[[i, 0]] = a;
        rewards[[i, 0]] = reward(s, positive);
        next_states
            .row_mut(i)
            .assign(&ndarray::arr1(&one_hot(next(s, positive))));
    }
    ReplayData {
        dims: PolicyDims {
            state_dim: 2,
            action_dim: 1,
            latent_dim: 1,
            action_bound: 1.0,
        },
        states,
        actions,
        rewards,
        next_states,
        dones: Array2::zeros((n, 1)),
        z: Array2::zeros((n, 1)),
        z_next: Array2::zeros((n, 1)),
        task_index: (0..n).map(|i| i % 2).collect(),
    }
}

pub fn toy_config(cql_alpha: f64, steps: usize) -> PolicyConfig {
    PolicyConfig {
        gamma: TOY_GAMMA,
        critic_lr: 1e-3,
        actor_lr: 1e-3,
        tau: 0.05,
        cql_alpha,
        n_penalty_actions: 4,
        hidden_widths: vec![32, 32],
        batch_size: 64,
        train_steps: steps,
        entropy_coef: 0.0,
    }
}

/// Mean of both critics at action `a` in `state`.
pub fn toy_q(p: &PolicyState, state: usize, a: f64) -> f64 {
    let s = Array2::from_shape_vec((1, 2), one_hot(state).to_vec()).unwrap();
    let act = Array2::from_elem((1, 1), a);
    let z = Array2::zeros((1, 1));
    (p.q_values(0, &s, &act, &z)[0] + p.q_values(1, &s, &act, &z)[0]) / 2.0
}

/// Dataset covering only the optimal action sign in each state.
pub fn toy_greedy_dataset(n: usize, seed: u64) -> ReplayData {
    toy_dataset(n, seed, |s| if s == 0 { (0.2, 1.0) } else { (-1.0, -0.2) })
}

/// Average learned Q at in-dataset and out-of-dataset actions for a critic
/// trained on [`toy_greedy_dataset`].
pub fn toy_seen_unseen(p: &PolicyState) -> (f64, f64) {
    let seen = (toy_q(p, 0, 0.6) + toy_q(p, 1, -0.6)) / 2.0;
    let unseen = (toy_q(p, 0, -0.6) + toy_q(p, 1, 0.6)) / 2.0;
    (seen, unseen)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_iteration_fixture() {
        assert_eq!(toy_value_iteration(), [[0.75, 1.5], [1.0, 0.75]]);
    }

    #[test]
    fn greedy_dataset_never_contains_the_other_sign() {
        let d = toy_greedy_dataset(500, 3);
        for i in 0..500 {
            let a = d.actions[[i, 0]];
            assert_eq!(a > 0.0, d.states[[i, 0]] == 1.0);
        }
    }
}
