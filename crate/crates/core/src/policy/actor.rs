//! Tanh-squashed diagonal Gaussian over the action box.

use std::f64::consts::{LN_2, PI};

use ndarray::{concatenate, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{PolicyDims, PolicyState, ACTOR_LOG_STD_MAX, ACTOR_LOG_STD_MIN};
use crate::nn::graph::softplus;
use crate::nn::{Bound, Graph, Mlp, Var};

pub(crate) struct ActorHeads {
    pub mean: Var,
    pub log_std: Var,
}

pub(crate) fn heads(
    g: &mut Graph,
    p: &Bound,
    net: &Mlp,
    dims: &PolicyDims,
    obs: Var,
) -> ActorHeads {
    let out = net.forward(g, p, obs);
    let ad = dims.action_dim;
    let mean = g.slice_cols(out, 0, ad);
    let raw = g.slice_cols(out, ad, 2 * ad);
    let log_std = g.clamp(raw, ACTOR_LOG_STD_MIN, ACTOR_LOG_STD_MAX);
    ActorHeads { mean, log_std }
}

/// Reparameterized sample `bound·tanh(mean + std·eps)` and its log-density,
/// `B×ad` and `B×1`.
pub(crate) fn sample_graph(
    g: &mut Graph,
    p: &Bound,
    net: &Mlp,
    dims: &PolicyDims,
    obs: Var,
    eps: &Array2<f64>,
) -> (Var, Var) {
    let h = heads(g, p, net, dims, obs);
    let std = g.exp(h.log_std);
    let e = g.constant(eps.clone());
    let noise = g.mul(std, e);
    let u = g.add(h.mean, noise);
    let squashed = g.tanh(u);
    let action = g.scale(squashed, dims.action_bound);

    let gauss = g.constant(eps.mapv(|x| -0.5 * x * x - 0.5 * (2.0 * PI).ln()));
    let base = g.sub(gauss, h.log_std);
    // log(1 − tanh²u) = 2·(ln 2 − u − softplus(−2u))
    let m2u = g.scale(u, -2.0);
    let sp = g.softplus(m2u);
    let usp = g.add(u, sp);
    let jac = g.scale(usp, -2.0);
    let jac = g.offset(jac, 2.0 * LN_2);
    let per_dim = g.sub(base, jac);
    let lp = g.sum_cols(per_dim);
    let lp = g.offset(lp, -(dims.action_dim as f64) * dims.action_bound.ln());
    (action, lp)
}

fn obs_row(dims: &PolicyDims, state: &[f64], z: &[f64]) -> Array2<f64> {
    assert_eq!(state.len(), dims.state_dim, "state width");
    assert_eq!(z.len(), dims.latent_dim, "latent width");
    let row: Vec<f64> = state.iter().chain(z).copied().collect();
    Array2::from_shape_vec((1, row.len()), row).expect("row shape")
}

/// Samples rows of actions for a batch of observations, with no gradient.
pub(crate) fn sample_frozen(
    policy: &PolicyState,
    states: &Array2<f64>,
    z: &Array2<f64>,
    rng: &mut impl Rng,
) -> (Array2<f64>, Array2<f64>) {
    let eps = Array2::from_shape_simple_fn((states.nrows(), policy.dims.action_dim), || {
        rng.sample(StandardNormal)
    });
    let mut g = Graph::new();
    let p = g.bind_frozen(&policy.actor_params);
    let obs = g.constant(concatenate![Axis(1), *states, *z]);
    let (a, lp) = sample_graph(&mut g, &p, &policy.actor, &policy.dims, obs, &eps);
    (g.value(a).clone(), g.value(lp).clone())
}

/// One stochastic action and its exact log-density under the squashed Gaussian.
pub fn actor_sample(
    policy: &PolicyState,
    state: &[f64],
    z: &[f64],
    rng: &mut impl Rng,
) -> (Vec<f64>, f64) {
    let obs = obs_row(&policy.dims, state, z);
    let (s, zz) = obs.view().split_at(Axis(1), policy.dims.state_dim);
    let (a, lp) = sample_frozen(policy, &s.to_owned(), &zz.to_owned(), rng);
    (a.row(0).to_vec(), lp[[0, 0]])
}

/// The squashed mean action `bound·tanh(mean)`.
pub fn act_deterministic(policy: &PolicyState, state: &[f64], z: &[f64]) -> Vec<f64> {
    let mut g = Graph::new();
    let p = g.bind_frozen(&policy.actor_params);
    let obs = g.constant(obs_row(&policy.dims, state, z));
    let h = heads(&mut g, &p, &policy.actor, &policy.dims, obs);
    g.value(h.mean)
        .row(0)
        .iter()
        .map(|&m| policy.dims.action_bound * m.tanh())
        .collect()
}

/// Log-density of an arbitrary action strictly inside the box.
pub fn actor_log_prob(policy: &PolicyState, state: &[f64], z: &[f64], action: &[f64]) -> f64 {
    let dims = &policy.dims;
    assert_eq!(action.len(), dims.action_dim, "action width");
    let mut g = Graph::new();
    let p = g.bind_frozen(&policy.actor_params);
    let obs = g.constant(obs_row(dims, state, z));
    let h = heads(&mut g, &p, &policy.actor, dims, obs);
    let (mean, log_std) = (g.value(h.mean), g.value(h.log_std));
    let mut total = 0.0;
    for d in 0..dims.action_dim {
        let y = (action[d] / dims.action_bound).clamp(-1.0 + 1e-12, 1.0 - 1e-12);
        let u = y.atanh();
        let ls = log_std[[0, d]];
        let eps = (u - mean[[0, d]]) / ls.exp();
        let log_jac = 2.0 * (LN_2 - u - softplus(-2.0 * u));
        total += -0.5 * eps * eps - ls - 0.5 * (2.0 * PI).ln() - log_jac - dims.action_bound.ln();
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn policy(seed: u64) -> PolicyState {
        let dims = PolicyDims {
            state_dim: 3,
            action_dim: 1,
            latent_dim: 2,
            action_bound: 2.0,
        };
        let cfg = PolicyConfig {
            hidden_widths: vec![16, 16],
            ..Default::default()
        };
        PolicyState::new(&cfg, dims, seed)
    }

    #[test]
    fn deterministic_mode_repeats() {
        let p = policy(3);
        let a = act_deterministic(&p, &[0.1, -0.2, 0.3], &[0.5, -0.5]);
        let b = act_deterministic(&p, &[0.1, -0.2, 0.3], &[0.5, -0.5]);
        assert_eq!(a, b);
        assert!(a[0].abs() < 2.0);
    }

    #[test]
    fn sampled_log_prob_matches_direct_evaluation() {
        let p = policy(4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let (a, lp) = actor_sample(&p, &[0.3, 0.1, -1.0], &[0.2, 0.0], &mut rng);
            assert!(lp.is_finite());
            assert!(a[0].abs() <= 2.0);
            if a[0].abs() < 1.99 {
                let direct = actor_log_prob(&p, &[0.3, 0.1, -1.0], &[0.2, 0.0], &a);
                assert!((direct - lp).abs() < 1e-6, "{direct} vs {lp}");
            }
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let p = policy(5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let (s, z) = ([0.2, -0.4, 0.7], [0.1, 0.3]);
        let sum: f64 = (0..n)
            .map(|_| {
                let a = rng.random_range(-2.0..2.0);
                actor_log_prob(&p, &s, &z, &[a]).exp()
            })
            .sum();
        let integral = 4.0 * sum / n as f64;
        assert!((integral - 1.0).abs() < 0.05, "integral {integral}");
    }

    #[test]
    fn log_std_is_clamped() {
        let mut p = policy(6);
        let out = p.actor.output_layer();
        let (w, b) = (out.weight, out.bias);
        p.actor_params.tensor_mut(w).fill(0.0);
        p.actor_params.tensor_mut(b).fill(50.0);
        let lp = actor_log_prob(&p, &[0.0; 3], &[0.0; 2], &[0.0]);
        assert!(lp.is_finite());
        let mut g = Graph::new();
        let b = g.bind_frozen(&p.actor_params);
        let obs = g.constant(Array2::zeros((1, 5)));
        let h = heads(&mut g, &b, &p.actor, &p.dims, obs);
        assert_eq!(g.value(h.log_std)[[0, 0]], ACTOR_LOG_STD_MAX);
    }
}
