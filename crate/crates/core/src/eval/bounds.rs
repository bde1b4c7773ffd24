//! Exact-enumeration checks of the contrastive lower bound on `I(z; M)` and
//! the KL upper bound on `I(z; a)` over small discrete instances.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::rng::stream;

const ROW_TOLERANCE: f64 = 1e-12;

/// Discrete tasks, trajectories, codes and actions with explicit conditional tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInstance {
    /// `p(M)`, length N.
    pub task_prior: Vec<f64>,
    /// `p(τ | M)`, N×T.
    pub traj_given_task: Vec<Vec<f64>>,
    /// `p_φ(z | τ)`, T×Z.
    pub code_given_traj: Vec<Vec<f64>>,
    /// `p(a)`, length A.
    pub action_prior: Vec<f64>,
    /// `p(z | a)`, A×Z.
    pub code_given_action: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

fn check_distribution(name: &str, row: &[f64]) -> Result<(), EvalError> {
    if row.is_empty() || row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(EvalError::InvalidInstance(format!(
            "{name} has a negative or non-finite entry"
        )));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_TOLERANCE {
        return Err(EvalError::InvalidInstance(format!(
            "{name} sums to {total}"
        )));
    }
    Ok(())
}

fn check_table(
    name: &str,
    rows: &[Vec<f64>],
    n_rows: usize,
    width: usize,
) -> Result<(), EvalError> {
    if rows.len() != n_rows {
        return Err(EvalError::InvalidInstance(format!(
            "{name} has {} rows, expected {n_rows}",
            rows.len()
        )));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(EvalError::InvalidInstance(format!(
                "{name} row {i} has width {}",
                r.len()
            )));
        }
        check_distribution(&format!("{name} row {i}"), r)?;
    }
    Ok(())
}

/// Dirichlet(1, …, 1) draw, normalized so the sum is 1 to machine precision.
fn simplex(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1) + 1e-12).collect();
    normalize(raw)
}

fn normalize(raw: Vec<f64>) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    let mut v: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let rest: f64 = v[1..].iter().sum();
    v[0] = 1.0 - rest;
    v
}

fn plogp_ratio(p: f64, q: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * (p / q).ln()
    }
}

/// `KL(p ‖ q)` for discrete distributions; infinite when `q` misses mass of `p`.
pub fn discrete_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            if pi > 0.0 && qi == 0.0 {
                f64::INFINITY
            } else {
                plogp_ratio(pi, qi)
            }
        })
        .sum()
}

impl BoundInstance {
    pub fn n_tasks(&self) -> usize {
        self.task_prior.len()
    }

    pub fn n_trajectories(&self) -> usize {
        self.code_given_traj.len()
    }

    pub fn n_codes(&self) -> usize {
        self.code_given_traj.first().map_or(0, |r| r.len())
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let (n, t, z) = (self.n_tasks(), self.n_trajectories(), self.n_codes());
        check_distribution("task prior", &self.task_prior)?;
        check_table("p(tau|M)", &self.traj_given_task, n, t)?;
        check_table("p(z|tau)", &self.code_given_traj, t, z)?;
        check_distribution("action prior", &self.action_prior)?;
        check_table(
            "p(z|a)",
            &self.code_given_action,
            self.action_prior.len(),
            z,
        )?;
        Ok(())
    }

    /// A random instance with uniform task prior and Dirichlet(1) rows;
    /// sizes are drawn from `N ∈ 2..=4`, `T ∈ 2..=6`, `Z ∈ 2..=5`, `A ∈ 2..=4`.
    pub fn random(seed: u64) -> Self {
        let mut rng = stream(seed, &[0xb0]);
        let n = rng.random_range(2..=4);
        let t = rng.random_range(2..=6);
        let z = rng.random_range(2..=5);
        let a = rng.random_range(2..=4);
        Self {
            task_prior: normalize(vec![1.0; n]),
            traj_given_task: (0..n).map(|_| simplex(&mut rng, t)).collect(),
            code_given_traj: (0..t).map(|_| simplex(&mut rng, z)).collect(),
            action_prior: simplex(&mut rng, a),
            code_given_action: (0..a).map(|_| simplex(&mut rng, z)).collect(),
        }
    }

    /// `p(z | M)` for every task, N×Z.
    fn code_given_task(&self) -> Vec<Vec<f64>> {
        self.traj_given_task
            .iter()
            .map(|pt| {
                (0..self.n_codes())
                    .map(|k| {
                        pt.iter()
                            .zip(&self.code_given_traj)
                            .map(|(p, row)| p * row[k])
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }

    /// Marginal `p(z)` implied by the task-side tables.
    pub fn code_marginal(&self) -> Vec<f64> {
        let per_task = self.code_given_task();
        (0..self.n_codes())
            .map(|k| {
                self.task_prior
                    .iter()
                    .zip(&per_task)
                    .map(|(pm, row)| pm * row[k])
                    .sum()
            })
            .collect()
    }

    /// Marginal `p(z)` implied by the action-side tables.
    pub fn action_code_marginal(&self) -> Vec<f64> {
        (0..self.n_codes())
            .map(|k| {
                self.action_prior
                    .iter()
                    .zip(&self.code_given_action)
                    .map(|(pa, row)| pa * row[k])
                    .sum()
            })
            .collect()
    }

    /// Exact `I(z; M)`.
    pub fn task_information(&self) -> f64 {
        let pz = self.code_marginal();
        self.task_prior
            .iter()
            .zip(self.code_given_task())
            .map(|(pm, row)| pm * discrete_kl(&row, &pz))
            .sum()
    }

    /// Exact `I(z; a)`.
    pub fn action_information(&self) -> f64 {
        let pz = self.action_code_marginal();
        self.action_prior
            .iter()
            .zip(&self.code_given_action)
            .map(|(pa, row)| pa * discrete_kl(row, &pz))
            .sum()
    }

    /// Exact value of `E[log(r(z, τ) / Σ_i r(z, τ^i))] + log N` with
    /// `r(z, τ) = p_φ(z|τ)/p(z)`: the task `M` and its trajectory `τ` are the
    /// positive pair, every other task contributes one independent
    /// trajectory `τ^i ~ p(·|M_i)`, and `z ~ p_φ(·|τ)`.
    pub fn contrastive_estimate(&self) -> f64 {
        let (n, t, nz) = (self.n_tasks(), self.n_trajectories(), self.n_codes());
        let pz = self.code_marginal();
        let ratio = |k: usize, traj: usize| self.code_given_traj[traj][k] / pz[k];
        let mut total = 0.0;
        for m in 0..n {
            let others: Vec<usize> = (0..n).filter(|&j| j != m).collect();
            for traj in 0..t {
                let p_traj = self.task_prior[m] * self.traj_given_task[m][traj];
                if p_traj == 0.0 {
                    continue;
                }
                for k in 0..nz {
                    let pzk = self.code_given_traj[traj][k];
                    if pzk == 0.0 || pz[k] == 0.0 {
                        continue;
                    }
                    let own = ratio(k, traj);
                    // Enumerate every assignment of one trajectory per other task.
                    let mut idx = vec![0usize; others.len()];
                    let mut inner = 0.0;
                    loop {
                        let mut weight = 1.0;
                        let mut denom = own;
                        for (slot, &j) in others.iter().enumerate() {
                            weight *= self.traj_given_task[j][idx[slot]];
                            denom += ratio(k, idx[slot]);
                        }
                        if weight > 0.0 {
                            inner += weight * (own / denom).ln();
                        }
                        let mut carry = 0;
                        while carry < idx.len() {
                            idx[carry] += 1;
                            if idx[carry] < t {
                                break;
                            }
                            idx[carry] = 0;
                            carry += 1;
                        }
                        if carry == idx.len() {
                            break;
                        }
                    }
                    total += p_traj * pzk * inner;
                }
            }
        }
        total + (n as f64).ln()
    }
}

/// Lower-bound check `I(z; M) ≥ contrastive estimate`, both by exhaustive summation.
pub fn validate_bound_t1(instance: &BoundInstance) -> Result<BoundCheck, EvalError> {
    instance.validate()?;
    let lhs = instance.task_information();
    let rhs = instance.contrastive_estimate();
    Ok(BoundCheck {
        lhs,
        rhs,
        holds: lhs >= rhs - 1e-12,
    })
}

/// Upper-bound check `I(z; a) ≤ E_a KL(p(·|a) ‖ t)` for one candidate `t`.
pub fn validate_bound_t2(instance: &BoundInstance, t: &[f64]) -> Result<BoundCheck, EvalError> {
    instance.validate()?;
    if t.len() != instance.n_codes() {
        return Err(EvalError::InvalidInstance(format!(
            "candidate t has {} entries, expected {}",
            t.len(),
            instance.n_codes()
        )));
    }
    check_distribution("candidate t", t)?;
    let lhs = instance.action_information();
    let rhs = instance
        .action_prior
        .iter()
        .zip(&instance.code_given_action)
        .map(|(pa, row)| pa * discrete_kl(row, t))
        .sum::<f64>();
    Ok(BoundCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-12,
    })
}

/// Candidate priors: the exact marginal, the uniform distribution, and
/// `n_random` mixtures of the marginal with random simplex points.
pub fn t2_candidates(instance: &BoundInstance, n_random: usize, seed: u64) -> Vec<Vec<f64>> {
    let z = instance.n_codes();
    let marginal = instance.action_code_marginal();
    let mut out = vec![normalize(marginal.clone()), normalize(vec![1.0; z])];
    let mut rng = stream(seed, &[0xb2]);
    for _ in 0..n_random {
        let w: f64 = rng.random_range(0.05..1.0);
        let noise = simplex(&mut rng, z);
        out.push(normalize(
            marginal
                .iter()
                .zip(&noise)
                .map(|(m, r)| (1.0 - w) * m + w * r)
                .collect(),
        ));
    }
    out
}

/// One row per instance and theorem of a validation sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub instance: usize,
    pub theorem: String,
    pub n_tasks: usize,
    pub n_trajectories: usize,
    pub n_codes: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundSweep {
    pub rows: Vec<BoundRow>,
    pub t1_holds: usize,
    pub t2_holds: usize,
    pub instances: usize,
    /// Largest `|I(z;a) − E_a KL(p(·|a) ‖ p(z))|` over instances.
    pub t2_marginal_gap: f64,
}

/// Runs both checks on `n` seeded random instances. An instance counts as
/// holding T2 only if every candidate `t` satisfies the bound.
pub fn validate_bounds(n: usize, seed: u64) -> Result<BoundSweep, EvalError> {
    let mut rows = Vec::with_capacity(2 * n);
    let (mut t1_holds, mut t2_holds) = (0, 0);
    let mut gap: f64 = 0.0;
    for i in 0..n {
        let inst = BoundInstance::random(crate::rng::derive_seed(seed, &[i as u64]));
        let t1 = validate_bound_t1(&inst)?;
        let candidates = t2_candidates(&inst, 8, crate::rng::derive_seed(seed, &[i as u64, 1]));
        let mut worst: Option<BoundCheck> = None;
        for (c, t) in candidates.iter().enumerate() {
            let check = validate_bound_t2(&inst, t)?;
            if c == 0 {
                gap = gap.max((check.rhs - check.lhs).abs());
            }
            if worst.is_none_or(|w| check.rhs - check.lhs < w.rhs - w.lhs) {
                worst = Some(check);
            }
        }
        let t2 = worst.expect("at least one candidate");
        let all_t2 = candidates.iter().all(|t| {
            validate_bound_t2(&inst, t)
                .map(|c| c.holds)
                .unwrap_or(false)
        });
        t1_holds += usize::from(t1.holds);
        t2_holds += usize::from(all_t2);
        let row = |theorem: &str, c: BoundCheck, holds: bool| BoundRow {
            instance: i,
            theorem: theorem.to_string(),
            n_tasks: inst.n_tasks(),
            n_trajectories: inst.n_trajectories(),
            n_codes: inst.n_codes(),
            lhs: c.lhs,
            rhs: c.rhs,
            holds,
        };
        rows.push(row("T1", t1, t1.holds));
        rows.push(row("T2", t2, all_t2));
    }
    Ok(BoundSweep {
        rows,
        t1_holds,
        t2_holds,
        instances: n,
        t2_marginal_gap: gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn identity(n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
            .collect()
    }

    fn base(
        n: usize,
        code_given_traj: Vec<Vec<f64>>,
        traj_given_task: Vec<Vec<f64>>,
    ) -> BoundInstance {
        let z = code_given_traj[0].len();
        BoundInstance {
            task_prior: vec![1.0 / n as f64; n],
            traj_given_task,
            code_given_traj,
            action_prior: vec![0.5, 0.5],
            code_given_action: vec![vec![1.0 / z as f64; z]; 2],
        }
    }

    #[test]
    fn encoder_ignoring_trajectory_is_tight_at_zero() {
        let inst = base(
            3,
            vec![vec![0.2, 0.3, 0.5]; 4],
            vec![
                vec![0.25; 4],
                vec![0.1, 0.2, 0.3, 0.4],
                vec![0.7, 0.1, 0.1, 0.1],
            ],
        );
        let c = validate_bound_t1(&inst).unwrap();
        assert!(c.lhs.abs() < 1e-12);
        assert!(c.rhs.abs() < 1e-12);
        assert!(c.holds);
    }

    #[test]
    fn bijective_encoder_is_tight_at_log_n() {
        for n in 2..=4 {
            let inst = base(n, identity(n), identity(n));
            let c = validate_bound_t1(&inst).unwrap();
            let ln = (n as f64).ln();
            assert!((c.lhs - ln).abs() < 1e-12, "{c:?}");
            assert!((c.rhs - ln).abs() < 1e-12, "{c:?}");
            assert!(c.holds);
        }
    }

    #[test]
    fn one_trajectory_per_task_is_tight() {
        for seed in 0..10 {
            let r = BoundInstance::random(seed);
            let n = r.n_trajectories().min(4);
            let inst = base(n, r.code_given_traj[..n].to_vec(), identity(n));
            let c = validate_bound_t1(&inst).unwrap();
            assert!((c.lhs - c.rhs).abs() < 1e-12, "{c:?}");
        }
    }

    #[test]
    fn trajectory_noise_pushes_the_estimate_above_task_information() {
        // Both tasks share one trajectory distribution, so z carries no task
        // information, yet the trajectory-level ratio still scores positive.
        let inst = base(2, identity(2), vec![vec![0.5, 0.5]; 2]);
        let c = validate_bound_t1(&inst).unwrap();
        assert!(c.lhs.abs() < 1e-12);
        // Half the time the negative repeats the positive trajectory: ½·ln ½ + ln 2.
        assert!((c.rhs - 0.5 * 2f64.ln()).abs() < 1e-12, "{c:?}");
        assert!(!c.holds);
    }

    #[test]
    fn t2_equality_at_marginal() {
        for seed in 0..20 {
            let inst = BoundInstance::random(seed);
            let c = validate_bound_t2(&inst, &inst.action_code_marginal()).unwrap();
            assert!((c.lhs - c.rhs).abs() <= 1e-10, "{c:?}");
        }
    }

    #[test]
    fn t2_independent_codes() {
        let mut inst = BoundInstance::random(3);
        let z = inst.n_codes();
        let row = normalize((1..=z).map(|k| k as f64).collect());
        inst.code_given_action = vec![row; inst.action_prior.len()];
        let c = validate_bound_t2(&inst, &normalize(vec![1.0; z])).unwrap();
        assert!(c.lhs.abs() < 1e-12);
        assert!(c.rhs >= 0.0 && c.holds);
    }

    #[test]
    fn invalid_rows_are_rejected() {
        let mut inst = BoundInstance::random(1);
        inst.code_given_traj[0][0] += 1e-6;
        assert!(matches!(
            validate_bound_t1(&inst),
            Err(EvalError::InvalidInstance(_))
        ));
        let inst = BoundInstance::random(2);
        assert!(validate_bound_t2(&inst, &[1.0]).is_err());
    }

    #[test]
    fn information_matches_entropy_identity() {
        // I(z;M) = H(z) − H(z|M).
        let inst = BoundInstance::random(11);
        let h = |p: &[f64]| {
            -p.iter()
                .filter(|&&x| x > 0.0)
                .map(|x| x * x.ln())
                .sum::<f64>()
        };
        let pz = inst.code_marginal();
        let cond: f64 = inst
            .task_prior
            .iter()
            .zip(inst.code_given_task())
            .map(|(pm, row)| pm * h(&row))
            .sum();
        assert!((inst.task_information() - (h(&pz) - cond)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn random_instances_are_valid(seed in 0u64..1000) {
            let inst = BoundInstance::random(seed);
            prop_assert!(inst.validate().is_ok());
            prop_assert!(inst.n_tasks() <= 4 && inst.n_trajectories() <= 6 && inst.n_codes() <= 5);
        }

        #[test]
        fn t2_holds_for_any_candidate(seed in 0u64..200) {
            let inst = BoundInstance::random(seed);
            for t in t2_candidates(&inst, 4, seed) {
                prop_assert!(validate_bound_t2(&inst, &t).unwrap().holds);
            }
        }
    }
}
