//! Central finite differences against reverse-mode gradients.

use super::graph::{Bound, Graph, Var};
use super::params::ParamSet;

/// Outcome of comparing analytic and numeric gradients over every parameter scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over scalars of |g_fd − g| / max(1e−8, |g_fd| + |g|)
    pub max_relative_error: f64,
    pub max_abs_error: f64,
    /// (parameter name, flat index within that tensor) of the worst scalar
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Relative discrepancy used throughout the gradient checks.
pub fn relative_error(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / (fd.abs() + analytic.abs()).max(1e-8)
}

/// Checks `loss(params)` built by `build` on a fresh graph.
///
/// `build` must be a pure function of the bound parameters: it is re-run for
/// every perturbed scalar, with the parameters placed as constants.
pub fn check_params<F>(params: &ParamSet, epsilon: f64, build: F) -> GradCheckReport
where
    F: Fn(&mut Graph, &Bound) -> Var,
{
    let mut g = Graph::new();
    let bound = g.bind(params);
    let loss = build(&mut g, &bound);
    let analytic = g.backward(loss).for_bound(&bound);

    let eval = |p: &ParamSet| {
        let mut g = Graph::new();
        let bound = g.bind_frozen(p);
        let loss = build(&mut g, &bound);
        g.scalar(loss)
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe = params.clone();
    for (id, grad) in analytic.iter().enumerate() {
        let cols = grad.ncols();
        for (k, &an) in grad.iter().enumerate() {
            let at = (k / cols, k % cols);
            let original = params.tensor(id)[at];
            probe.tensor_mut(id)[at] = original + epsilon;
            let plus = eval(&probe);
            probe.tensor_mut(id)[at] = original - epsilon;
            let minus = eval(&probe);
            probe.tensor_mut(id)[at] = original;

            let fd = (plus - minus) / (2.0 * epsilon);
            let rel = relative_error(fd, an);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max((fd - an).abs());
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((params.names()[id].clone(), k));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Linear;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_tanh_mse_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ParamSet::new();
        let l1 = Linear::new(&mut p, "l1", 3, 5, &mut rng);
        let l2 = Linear::new(&mut p, "l2", 5, 1, &mut rng);
        let x = array![[0.1, -0.4, 0.8], [1.2, 0.3, -0.5]];
        let y = array![[0.5], [-0.25]];
        let report = check_params(&p, 1e-6, |g, b| {
            let x = g.constant(x.clone());
            let h = l1.forward(g, b, x);
            let h = g.tanh(h);
            let o = l2.forward(g, b, h);
            let t = g.constant(y.clone());
            let d = g.sub(o, t);
            let d = g.square(d);
            g.mean(d)
        });
        assert!(report.max_relative_error < 1e-6, "{report:?}");
        assert_eq!(report.checked, p.count());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 0.5) - 1.0 / 3.0).abs() < 1e-15);
    }
}
