//! Sampled-action conservative penalty.

use ndarray::{concatenate, Array2, Axis};
use rand::Rng;

use super::actor::sample_frozen;
use super::{PolicyState, ReplayBatch};
use crate::nn::{Bound, Graph, Mlp, Var};

/// Out-of-data actions and the log-density each was drawn with.
pub(crate) struct Proposals {
    pub actions: Vec<Array2<f64>>,
    pub log_density: Array2<f64>,
}

/// `k_uniform` draws from the action box followed by `k_policy` draws from the
/// current actor, all without gradient.
pub(crate) fn draw_proposals(
    policy: &PolicyState,
    batch: &ReplayBatch,
    k_uniform: usize,
    k_policy: usize,
    rng: &mut impl Rng,
) -> Proposals {
    let dims = &policy.dims;
    let b = batch.len();
    let n = k_uniform + k_policy;
    assert!(n > 0, "at least one proposal action is required");
    let mut actions = Vec::with_capacity(n);
    let mut log_density = Array2::zeros((b, n));
    let bound = dims.action_bound;
    for j in 0..k_uniform {
        actions.push(Array2::from_shape_simple_fn((b, dims.action_dim), || {
            rng.random_range(-bound..bound)
        }));
        log_density.column_mut(j).fill(-dims.log_box_volume());
    }
    for j in 0..k_policy {
        let (a, lp) = sample_frozen(policy, &batch.states, &batch.z, rng);
        actions.push(a);
        log_density.column_mut(k_uniform + j).assign(&lp.column(0));
    }
    Proposals {
        actions,
        log_density,
    }
}

pub(crate) struct CriticTerms {
    /// `Q(s, a_data, z)`, `B×1`.
    pub q_data: Var,
    /// Batch mean of `logsumexp_j(Q_j − log q_j) − log n − Q(s, a_data, z)`.
    pub penalty: Var,
}

/// One forward pass of a critic over the data action and every proposal.
pub(crate) fn critic_terms(
    g: &mut Graph,
    p: &Bound,
    net: &Mlp,
    batch: &ReplayBatch,
    proposals: &Proposals,
) -> CriticTerms {
    let n = proposals.actions.len();
    let blocks: Vec<Array2<f64>> = std::iter::once(&batch.actions)
        .chain(&proposals.actions)
        .map(|a| concatenate![Axis(1), batch.states, *a, batch.z])
        .collect();
    let views: Vec<_> = blocks.iter().map(|x| x.view()).collect();
    let x = g.constant(concatenate(Axis(0), &views).expect("equal widths"));
    let q = net.forward(g, p, x);
    let grid = g.blocks_to_cols(q, n + 1);
    let q_data = g.slice_cols(grid, 0, 1);
    let q_prop = g.slice_cols(grid, 1, n + 1);
    let dens = g.constant(proposals.log_density.clone());
    let weighted = g.sub(q_prop, dens);
    let lse = g.logsumexp_cols(weighted);
    let lse = g.offset(lse, -(n as f64).ln());
    let gap = g.sub(lse, q_data);
    let penalty = g.mean(gap);
    CriticTerms { q_data, penalty }
}

/// Penalty averaged over both critics. `k_policy = 0` uses box-uniform
/// proposals only.
pub fn cql_penalty(
    policy: &PolicyState,
    batch: &ReplayBatch,
    k_uniform: usize,
    k_policy: usize,
    rng: &mut impl Rng,
) -> f64 {
    let props = draw_proposals(policy, batch, k_uniform, k_policy, rng);
    let mut total = 0.0;
    for critic in &policy.critics {
        let mut g = Graph::new();
        let p = g.bind_frozen(critic);
        let t = critic_terms(&mut g, &p, &policy.critic, batch, &props);
        total += g.scalar(t.penalty);
    }
    total / 2.0
}

/// Reference implementation over explicit per-sample Q values: `q_data` is
/// `B`, `q_prop` and `log_density` are `B×n`.
#[cfg(test)]
pub(crate) fn penalty_reference(
    q_data: &[f64],
    q_prop: &Array2<f64>,
    log_density: &Array2<f64>,
) -> f64 {
    let n = q_prop.ncols() as f64;
    let rows = q_data.len();
    (0..rows)
        .map(|r| {
            let vals: Vec<f64> = (0..q_prop.ncols())
                .map(|j| q_prop[[r, j]] - log_density[[r, j]])
                .collect();
            let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - n.ln() - q_data[r]
        })
        .sum::<f64>()
        / rows as f64
}
