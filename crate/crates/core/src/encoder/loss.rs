use ndarray::Array2;

use super::MovingAverageBank;
use super::{
    EncoderConfig, EncoderError, EncoderNet, EncoderState, GaussianLatent, LatentVars, SegmentBatch,
};
use crate::nn::{check_params, Bound, GradCheckReport, Graph, Var};

/// `exp(−‖a − b‖² / alpha)`.
pub fn rbf_similarity(a: &[f64], b: &[f64], alpha: f64) -> Result<f64, EncoderError> {
    if !(alpha > 0.0) {
        return Err(EncoderError::Config(format!(
            "kernel bandwidth must be positive, got {alpha}"
        )));
    }
    if a.len() != b.len() {
        return Err(EncoderError::Shape(format!(
            "lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((-d2 / alpha).exp())
}

/// `KL[p ‖ q]` between diagonal Gaussians.
pub fn gaussian_kl(p: &GaussianLatent, q: &GaussianLatent) -> f64 {
    p.mean
        .iter()
        .zip(&p.log_std)
        .zip(q.mean.iter().zip(&q.log_std))
        .map(|((mp, lp), (mq, lq))| {
            let vp = (2.0 * lp).exp();
            let vq = (2.0 * lq).exp();
            lq - lp + (vp + (mp - mq).powi(2)) / (2.0 * vq) - 0.5
        })
        .sum()
}

pub fn total_loss(distortion: f64, debias: f64, beta: f64) -> f64 {
    distortion + beta * debias
}

/// Batch-mean contrastive loss of codes `z` (`batch × m`) against constant
/// anchors `bank` (`n_tasks × m`).
pub(crate) fn distortion_term(
    g: &mut Graph,
    z: Var,
    labels: &[usize],
    bank: &Array2<f64>,
    alpha: f64,
) -> Var {
    let cols: Vec<Var> = bank
        .rows()
        .into_iter()
        .map(|anchor| {
            let neg = g.constant(anchor.mapv(|v| -v).insert_axis(ndarray::Axis(0)));
            let diff = g.add_row(z, neg);
            let sq = g.square(diff);
            g.sum_cols(sq)
        })
        .collect();
    let d2 = g.concat_cols(&cols);
    let logits = g.scale(d2, -1.0 / alpha);
    let lse = g.logsumexp_cols(logits);
    let own = g.pick_cols(logits, labels);
    let per = g.sub(lse, own);
    g.mean(per)
}

/// Batch mean of `Σ_t KL[p_t ‖ p_{t−1}]` over consecutive steps that both
/// lie in the valid part of each window.
pub(crate) fn debias_term(
    g: &mut Graph,
    lat: &LatentVars,
    valid_len: &[usize],
    stop_grad: bool,
) -> Var {
    let h = lat.mean.len();
    let batch = valid_len.len();
    let mut total: Option<Var> = None;
    for t in 1..h {
        let mask = Array2::from_shape_fn(
            (batch, 1),
            |(b, _)| {
                if t > h - valid_len[b] {
                    1.0
                } else {
                    0.0
                }
            },
        );
        if mask.iter().all(|&m| m == 0.0) {
            continue;
        }
        let (mp, lp) = (lat.mean[t], lat.log_std[t]);
        let (mut mq, mut lq) = (lat.mean[t - 1], lat.log_std[t - 1]);
        if stop_grad {
            mq = g.detach(mq);
            lq = g.detach(lq);
        }
        let kl = kl_rows(g, mp, lp, mq, lq);
        let mask = g.constant(mask);
        let kl = g.mul_col(kl, mask);
        total = Some(match total {
            Some(acc) => g.add(acc, kl),
            None => kl,
        });
    }
    match total {
        Some(acc) => g.mean(acc),
        None => g.constant(Array2::zeros((1, 1))),
    }
}

/// Per-row `KL[N(mp, e^{lp}) ‖ N(mq, e^{lq})]`, `batch × 1`.
fn kl_rows(g: &mut Graph, mp: Var, lp: Var, mq: Var, lq: Var) -> Var {
    let log_ratio = g.sub(lq, lp);
    let two_lp = g.scale(lp, 2.0);
    let vp = g.exp(two_lp);
    let dm = g.sub(mp, mq);
    let dm2 = g.square(dm);
    let num = g.add(vp, dm2);
    let neg_two_lq = g.scale(lq, -2.0);
    let inv_vq = g.exp(neg_two_lq);
    let frac = g.mul(num, inv_vq);
    let frac = g.scale(frac, 0.5);
    let terms = g.add(log_ratio, frac);
    let terms = g.offset(terms, -0.5);
    g.sum_cols(terms)
}

/// Values of the three loss terms on one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub distortion: f64,
    pub debias: f64,
    pub total: f64,
}

pub(crate) struct LossVars {
    pub distortion: Var,
    pub debias: Var,
    pub total: Var,
}

pub(crate) fn build_losses(
    g: &mut Graph,
    net: &EncoderNet,
    p: &Bound,
    config: &EncoderConfig,
    batch: &SegmentBatch,
    labels: &[usize],
    bank: &Array2<f64>,
) -> LossVars {
    let lat = net.forward(g, p, &batch.steps);
    let z = *lat.mean.last().expect("history_len ≥ 1");
    let distortion = distortion_term(g, z, labels, bank, config.kernel_bandwidth);
    let debias = debias_term(g, &lat, &batch.valid_len, config.debias_stop_grad);
    let weighted = g.scale(debias, config.beta);
    let total = g.add(distortion, weighted);
    LossVars {
        distortion,
        debias,
        total,
    }
}

/// Mean distortion loss of representations `z` labelled with their task index.
pub fn distortion_loss(
    z: &[Vec<f64>],
    labels: &[usize],
    bank: &MovingAverageBank,
    alpha: f64,
) -> Result<f64, EncoderError> {
    if !(alpha > 0.0) {
        return Err(EncoderError::Config(format!(
            "kernel bandwidth must be positive, got {alpha}"
        )));
    }
    let anchors = bank.matrix()?;
    let m = anchors.ncols();
    let zs = Array2::from_shape_fn((z.len(), m), |(b, d)| z[b][d]);
    let mut g = Graph::new();
    let zv = g.constant(zs);
    let loss = distortion_term(&mut g, zv, labels, &anchors, alpha);
    Ok(g.scalar(loss))
}

/// Mean over sequences of the summed consecutive-step KL, counting only steps
/// inside each window's valid suffix.
pub fn debias_loss(sequences: &[Vec<GaussianLatent>], valid_len: &[usize]) -> f64 {
    let h = sequences[0].len();
    let m = sequences[0][0].mean.len();
    let mut g = Graph::new();
    let mut lat = LatentVars {
        mean: Vec::with_capacity(h),
        log_std: Vec::with_capacity(h),
    };
    for t in 0..h {
        let mean = Array2::from_shape_fn((sequences.len(), m), |(b, d)| sequences[b][t].mean[d]);
        let ls = Array2::from_shape_fn((sequences.len(), m), |(b, d)| sequences[b][t].log_std[d]);
        lat.mean.push(g.constant(mean));
        lat.log_std.push(g.constant(ls));
    }
    let loss = debias_term(&mut g, &lat, valid_len, false);
    g.scalar(loss)
}

/// Which objective a gradient check differentiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossTerm {
    Distortion,
    Debias,
    Total,
}

impl EncoderState {
    /// Loss values on `batch` with the current bank, without updating anything.
    pub fn losses(
        &self,
        batch: &SegmentBatch,
        labels: &[usize],
    ) -> Result<LossBreakdown, EncoderError> {
        let bank = self.bank.matrix()?;
        let mut g = Graph::new();
        let p = g.bind_frozen(&self.params);
        let v = build_losses(&mut g, &self.net, &p, &self.config, batch, labels, &bank);
        Ok(LossBreakdown {
            distortion: g.scalar(v.distortion),
            debias: g.scalar(v.debias),
            total: g.scalar(v.total),
        })
    }
}

/// Central-difference check of the analytic encoder gradient for one loss term.
pub fn grad_check(
    state: &EncoderState,
    batch: &SegmentBatch,
    labels: &[usize],
    term: LossTerm,
    epsilon: f64,
) -> Result<GradCheckReport, EncoderError> {
    let bank = state.bank.matrix()?;
    Ok(check_params(&state.params, epsilon, |g, p| {
        let v = build_losses(g, &state.net, p, &state.config, batch, labels, &bank);
        match term {
            LossTerm::Distortion => v.distortion,
            LossTerm::Debias => v.debias,
            LossTerm::Total => v.total,
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::TrajectorySegment;
    use proptest::prelude::*;

    fn lat(mean: f64, var: f64) -> GaussianLatent {
        GaussianLatent::new(vec![mean], vec![0.5 * var.ln()])
    }

    #[test]
    fn rbf_fixtures() {
        assert_eq!(rbf_similarity(&[0.3, 0.2], &[0.3, 0.2], 1.0).unwrap(), 1.0);
        let e1 = rbf_similarity(&[0.0, 0.0], &[1.0, 1.0], 2.0).unwrap();
        assert!((e1 - (-1.0f64).exp()).abs() < 1e-12);
        let e2 = rbf_similarity(&[0.0, 0.0], &[1.0, 1.0], 1.0).unwrap();
        assert!((e2 - 0.135_335_283_236_612_7).abs() < 1e-12);
        assert!(rbf_similarity(&[0.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn kl_fixtures() {
        assert_eq!(gaussian_kl(&lat(0.2, 1.3), &lat(0.2, 1.3)), 0.0);
        assert!((gaussian_kl(&lat(0.0, 1.0), &lat(1.0, 1.0)) - 0.5).abs() < 1e-9);
        let expect = (3.0 - 4.0f64.ln()) / 2.0;
        assert!((gaussian_kl(&lat(0.0, 4.0), &lat(0.0, 1.0)) - expect).abs() < 1e-9);
        assert!((expect - 0.806853).abs() < 1e-6);
    }

    #[test]
    fn distortion_fixtures() {
        let one = MovingAverageBank::from_entries(vec![vec![0.4, -0.1]], 0.1);
        assert!(
            distortion_loss(&[vec![0.9, 0.9]], &[0], &one, 1.0)
                .unwrap()
                .abs()
                < 1e-15
        );

        let same = MovingAverageBank::from_entries(vec![vec![0.1, 0.2]; 5], 0.1);
        let l = distortion_loss(&[vec![-0.3, 0.7], vec![0.5, 0.5]], &[2, 4], &same, 1.0).unwrap();
        assert!((l - 5.0f64.ln()).abs() < 1e-12);

        let two = MovingAverageBank::from_entries(vec![vec![0.0, 0.0], vec![1.0, 1.0]], 0.1);
        let l = distortion_loss(&[vec![0.0, 0.0]], &[0], &two, 1.0).unwrap();
        let expect = -(1.0 / (1.0 + (-2.0f64).exp())).ln();
        assert!((l - expect).abs() < 1e-12);
        assert!((expect - 0.126928).abs() < 1e-6);

        let partial = MovingAverageBank::new(2, 2, 0.1);
        assert!(matches!(
            distortion_loss(&[vec![0.0, 0.0]], &[0], &partial, 1.0),
            Err(EncoderError::UninitializedBank(0))
        ));
    }

    #[test]
    fn debias_fixtures() {
        let seq = vec![lat(0.0, 1.0), lat(1.0, 1.0)];
        assert!((debias_loss(&[seq.clone()], &[2]) - 0.5).abs() < 1e-12);
        assert_eq!(debias_loss(&[seq], &[1]), 0.0);
        let flat = vec![lat(0.3, 0.5); 4];
        assert_eq!(debias_loss(&[flat], &[4]), 0.0);
    }

    #[test]
    fn debias_counts_only_valid_pairs() {
        let seq = vec![lat(5.0, 1.0), lat(0.0, 1.0), lat(1.0, 1.0), lat(3.0, 1.0)];
        let manual = |valid: usize| {
            (4 - valid + 1..4)
                .map(|t| gaussian_kl(&seq[t], &seq[t - 1]))
                .sum::<f64>()
        };
        for v in 1..=4 {
            assert!((debias_loss(&[seq.clone()], &[v]) - manual(v)).abs() < 1e-12);
        }
        let both = debias_loss(&[seq.clone(), seq.clone()], &[4, 2]);
        assert!((both - (manual(4) + manual(2)) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn constant_encoder_has_zero_debias() {
        let cfg = EncoderConfig {
            input_embed_width: 6,
            gru_width: 5,
            head_width: 4,
            history_len: 4,
            ..EncoderConfig::default()
        };
        let mut st = EncoderState::new(&cfg, 3, 2, 8);
        st.net.zero_signal_weights(&mut st.params);
        let segs: Vec<_> = (0..3)
            .map(|k| TrajectorySegment::new(vec![vec![k as f64, 1.0, -0.5]; 4], 4).unwrap())
            .collect();
        let batch = SegmentBatch::from_segments(&segs, 3).unwrap();
        let seqs = st.encode_batch(&batch).unwrap();
        assert!(debias_loss(&seqs, &batch.valid_len).abs() < 1e-15);
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss(0.7, 123.0, 0.0), 0.7);
        assert!((total_loss(0.7, 0.3, 0.2) - 0.76).abs() < 1e-15);
        assert!(total_loss(0.8, 0.15, 10.0) < total_loss(0.7, 0.3, 10.0));
    }

    fn gradcheck_fixture(stop_grad: bool, beta: f64) -> (EncoderState, SegmentBatch, Vec<usize>) {
        let cfg = EncoderConfig {
            input_embed_width: 6,
            gru_width: 5,
            head_width: 4,
            history_len: 4,
            beta,
            debias_stop_grad: stop_grad,
            ..EncoderConfig::default()
        };
        let mut st = EncoderState::new(&cfg, 3, 3, 21);
        st.bank = MovingAverageBank::from_entries(
            vec![vec![0.3, -0.2], vec![-0.5, 0.1], vec![0.0, 0.6]],
            0.1,
        );
        let segs: Vec<_> = (0..5)
            .map(|b| {
                let valid = 1 + b % 4;
                let pairs = (0..valid)
                    .map(|k| {
                        (0..3)
                            .map(|j| ((b * 7 + k * 3 + j) as f64 * 0.61).sin())
                            .collect()
                    })
                    .collect();
                TrajectorySegment::new(pairs, 4).unwrap()
            })
            .collect();
        (
            st,
            SegmentBatch::from_segments(&segs, 3).unwrap(),
            vec![0, 1, 2, 0, 1],
        )
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let (st, batch, labels) = gradcheck_fixture(false, 0.7);
        for term in [LossTerm::Distortion, LossTerm::Debias, LossTerm::Total] {
            let r = grad_check(&st, &batch, &labels, term, 1e-4).unwrap();
            assert!(r.max_relative_error <= 1e-4, "{term:?}: {r:?}");
        }
    }

    #[test]
    fn stop_grad_keeps_value_and_changes_gradient() {
        let grads = |stop: bool| {
            let (st, batch, labels) = gradcheck_fixture(stop, 0.7);
            let mut g = Graph::new();
            let p = g.bind(&st.params);
            let bank = st.bank.matrix().unwrap();
            let v = build_losses(&mut g, &st.net, &p, &st.config, &batch, &labels, &bank);
            (g.scalar(v.debias), g.backward(v.debias).for_bound(&p))
        };
        let (a, ga) = grads(false);
        let (b, gb) = grads(true);
        assert_eq!(a, b);
        assert_ne!(ga, gb);
    }

    #[test]
    fn linear_head_distortion_gradient() {
        use crate::nn::{Linear, ParamSet};
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut params = ParamSet::new();
        let lin = Linear::new(&mut params, "head", 3, 2, &mut rng);
        let x = Array2::from_shape_fn((6, 3), |(i, j)| ((i * 3 + j) as f64 * 0.43).cos());
        let bank = ndarray::array![[0.2, -0.4], [0.5, 0.5], [-0.6, 0.1]];
        let labels = [0, 1, 2, 2, 1, 0];
        let r = check_params(&params, 1e-5, |g, p| {
            let xv = g.constant(x.clone());
            let z = lin.forward(g, p, xv);
            distortion_term(g, z, &labels, &bank, 1.0)
        });
        assert!(r.max_relative_error <= 1e-6, "{r:?}");
    }

    #[test]
    fn unused_log_std_head_has_zero_gradient_without_debias() {
        let (st, batch, labels) = gradcheck_fixture(false, 0.0);
        let mut g = Graph::new();
        let p = g.bind(&st.params);
        let bank = st.bank.matrix().unwrap();
        let v = build_losses(&mut g, &st.net, &p, &st.config, &batch, &labels, &bank);
        let grads = g.backward(v.total).for_bound(&p);
        assert!(grads[st.net.log_std.weight].iter().all(|&x| x == 0.0));
        assert!(grads[st.net.log_std.bias].iter().all(|&x| x == 0.0));
        let r = grad_check(&st, &batch, &labels, LossTerm::Total, 1e-4).unwrap();
        assert!(r.max_relative_error <= 1e-4, "{r:?}");
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(
            m1 in -1.0..1.0f64, m2 in -1.0..1.0f64,
            l1 in -5.0..2.0f64, l2 in -5.0..2.0f64,
        ) {
            let p = GaussianLatent::new(vec![m1], vec![l1]);
            let q = GaussianLatent::new(vec![m2], vec![l2]);
            prop_assert!(gaussian_kl(&p, &q) >= -1e-12);
        }

        #[test]
        fn rbf_is_symmetric_and_decreasing(
            a in proptest::collection::vec(-1.0..1.0f64, 2),
            b in proptest::collection::vec(-1.0..1.0f64, 2),
            alpha in 0.1..5.0f64,
        ) {
            let s = rbf_similarity(&a, &b, alpha).unwrap();
            prop_assert_eq!(s, rbf_similarity(&b, &a, alpha).unwrap());
            prop_assert!(s > 0.0 && s <= 1.0);
            let far: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + 2.0 * (y - x)).collect();
            if a != b {
                prop_assert!(rbf_similarity(&a, &far, alpha).unwrap() < s);
            }
        }

        #[test]
        fn distortion_is_nonnegative(
            z in proptest::collection::vec(-1.0..1.0f64, 2),
            anchors in proptest::collection::vec(proptest::collection::vec(-1.0..1.0f64, 2), 1..6),
            pick in 0usize..6,
        ) {
            let n = anchors.len();
            let bank = MovingAverageBank::from_entries(anchors, 0.1);
            let l = distortion_loss(&[z], &[pick % n], &bank, 1.0).unwrap();
            prop_assert!(l >= -1e-12);
        }
    }
}
