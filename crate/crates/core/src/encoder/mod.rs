//! Recurrent context encoder with a diagonal-Gaussian head, the contrastive
//! distortion loss against a moving-average bank, the sequential-KL debias
//! loss, and the offline training loop.

mod bank;
mod checkpoint;
mod loss;
mod segment;
mod train;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::EnvId;
use crate::nn::{Bound, Graph, Linear, ParamSet, Var};

pub use bank::MovingAverageBank;
pub use checkpoint::{load_encoder, save_encoder, ENCODER_KIND};
pub use loss::{
    debias_loss, distortion_loss, gaussian_kl, grad_check, rbf_similarity, total_loss,
    LossBreakdown, LossTerm,
};
pub use segment::{SegmentBatch, TrajectorySegment};
pub use train::{sample_window, train_encoder, write_loss_csv, LossRow, TrainedEncoder};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid encoder configuration: {0}")]
    Config(String),
    #[error("segment shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {context}")]
    NonFinite {
        context: String,
        snapshot: Box<ParamSet>,
    },
    #[error("bank entry for task {0} used before it was initialized")]
    UninitializedBank(usize),
    #[error("loss became non-finite at step {step}; last good state kept")]
    Diverged {
        step: usize,
        last_good: Box<EncoderState>,
        log: Vec<LossRow>,
    },
    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub history_len: usize,
    pub latent_dim: usize,
    pub input_embed_width: usize,
    pub gru_width: usize,
    pub head_width: usize,
    pub kernel_bandwidth: f64,
    pub momentum: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub train_steps: usize,
    /// Cut the gradient through the previous-step posterior in the debias term.
    pub debias_stop_grad: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            history_len: 8,
            latent_dim: 2,
            input_embed_width: 128,
            gru_width: 64,
            head_width: 64,
            kernel_bandwidth: 1.0,
            momentum: 0.1,
            beta: 1.0,
            learning_rate: 3e-4,
            batch_size: 256,
            train_steps: 2000,
            debias_stop_grad: false,
        }
    }
}

impl EncoderConfig {
    /// Narrower layers sized for a single CPU core.
    pub fn desk() -> Self {
        Self {
            input_embed_width: 32,
            gru_width: 32,
            head_width: 32,
            batch_size: 128,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: &str| Err(EncoderError::Config(m.to_string()));
        if self.history_len < 1 {
            return bad("history_len must be at least 1");
        }
        if self.latent_dim < 1 {
            return bad("latent_dim must be at least 1");
        }
        if self.input_embed_width == 0 || self.gru_width == 0 || self.head_width == 0 {
            return bad("layer widths must be positive");
        }
        if !(self.kernel_bandwidth > 0.0) {
            return bad("kernel_bandwidth must be positive");
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return bad("momentum must lie in (0, 1)");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be non-negative");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }
}

/// Diagonal Gaussian over the task code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianLatent {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl GaussianLatent {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Self {
        Self { mean, log_std }
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }
}

/// Layer layout of the encoder inside its [`ParamSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderNet {
    pub input_dim: usize,
    pub gru_width: usize,
    pub latent_dim: usize,
    embed: Linear,
    /// Input-side GRU gates `[update | reset | candidate]`, with biases.
    gates_x: Linear,
    /// Hidden-side weights of the update and reset gates.
    gates_h: usize,
    /// Hidden-side weight of the candidate.
    cand_h: usize,
    head: Linear,
    mean: Linear,
    log_std: Linear,
}

/// Posterior parameters for every step of a batch, each `batch × latent_dim`.
pub struct LatentVars {
    pub mean: Vec<Var>,
    pub log_std: Vec<Var>,
}

impl EncoderNet {
    pub fn new(
        config: &EncoderConfig,
        input_dim: usize,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let (e, g, h, m) = (
            config.input_embed_width,
            config.gru_width,
            config.head_width,
            config.latent_dim,
        );
        let embed = Linear::new(params, "embed", input_dim, e, rng);
        let gates_x = Linear::new(params, "gru.x", e, 3 * g, rng);
        let gates_h = params.push(
            "gru.h_gates",
            crate::nn::params::uniform_init(rng, g, (g, 2 * g)),
        );
        let cand_h = params.push(
            "gru.h_cand",
            crate::nn::params::uniform_init(rng, g, (g, g)),
        );
        let head = Linear::new(params, "head", g, h, rng);
        let mean = Linear::new(params, "mean", h, m, rng);
        let log_std = Linear::new(params, "log_std", h, m, rng);
        Self {
            input_dim,
            gru_width: g,
            latent_dim: m,
            embed,
            gates_x,
            gates_h,
            cand_h,
            head,
            mean,
            log_std,
        }
    }

    /// Runs the recurrence over `steps` (one `batch × input_dim` array per
    /// window slot, oldest first) starting from a zero hidden state.
    pub fn forward(&self, g: &mut Graph, p: &Bound, steps: &[Array2<f64>]) -> LatentVars {
        let batch = steps[0].nrows();
        let w = self.gru_width;
        let mut h = g.constant(Array2::zeros((batch, w)));
        let mut out = LatentVars {
            mean: Vec::with_capacity(steps.len()),
            log_std: Vec::with_capacity(steps.len()),
        };
        for x in steps {
            let x = g.constant(x.clone());
            let e = self.embed.forward(g, p, x);
            let e = g.relu(e);
            let gx = self.gates_x.forward(g, p, e);
            let gh = g.matmul(h, p.var(self.gates_h));
            let ux = g.slice_cols(gx, 0, w);
            let uh = g.slice_cols(gh, 0, w);
            let u = g.add(ux, uh);
            let u = g.sigmoid(u);
            let rx = g.slice_cols(gx, w, 2 * w);
            let rh = g.slice_cols(gh, w, 2 * w);
            let r = g.add(rx, rh);
            let r = g.sigmoid(r);
            let rh = g.mul(r, h);
            let ch = g.matmul(rh, p.var(self.cand_h));
            let cx = g.slice_cols(gx, 2 * w, 3 * w);
            let c = g.add(cx, ch);
            let c = g.tanh(c);
            let delta = g.sub(c, h);
            let step = g.mul(u, delta);
            h = g.add(h, step);

            let hd = self.head.forward(g, p, h);
            let hd = g.relu(hd);
            let mu = self.mean.forward(g, p, hd);
            out.mean.push(g.tanh(mu));
            let ls = self.log_std.forward(g, p, hd);
            out.log_std.push(g.clamp(ls, LOG_STD_MIN, LOG_STD_MAX));
        }
        out
    }

    /// Zeroes the mean and log-std output weights, leaving their biases.
    pub fn zero_output_weights(&self, params: &mut ParamSet) {
        params.tensor_mut(self.mean.weight).fill(0.0);
        params.tensor_mut(self.log_std.weight).fill(0.0);
    }

    /// Zeroes every weight that carries input or recurrent signal, so the
    /// posterior is a constant given by the output biases.
    pub fn zero_signal_weights(&self, params: &mut ParamSet) {
        for id in [
            self.embed.weight,
            self.gates_x.weight,
            self.gates_h,
            self.cand_h,
            self.head.weight,
        ] {
            params.tensor_mut(id).fill(0.0);
        }
    }
}

/// Trainable encoder plus the per-task moving-average bank.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState {
    pub config: EncoderConfig,
    pub net: EncoderNet,
    pub params: ParamSet,
    pub bank: MovingAverageBank,
    /// Environment the encoder was trained on; `None` for a fresh network.
    pub env_id: Option<EnvId>,
}

impl EncoderState {
    pub fn new(config: &EncoderConfig, input_dim: usize, n_tasks: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let net = EncoderNet::new(config, input_dim, &mut params, &mut rng);
        Self {
            config: config.clone(),
            net,
            params,
            bank: MovingAverageBank::new(n_tasks, config.latent_dim, config.momentum),
            env_id: None,
        }
    }

    /// Posterior sequence `z¹ … z^H` for one segment; the last entry is the
    /// segment's representation.
    pub fn encode(&self, segment: &TrajectorySegment) -> Result<Vec<GaussianLatent>, EncoderError> {
        let batch = SegmentBatch::from_segments(std::slice::from_ref(segment), self.net.input_dim)?;
        Ok(self.encode_batch(&batch)?.remove(0))
    }

    /// Posterior sequences for a batch, frozen (no gradient).
    pub fn encode_batch(
        &self,
        batch: &SegmentBatch,
    ) -> Result<Vec<Vec<GaussianLatent>>, EncoderError> {
        if batch.input_dim() != self.net.input_dim {
            return Err(EncoderError::Shape(format!(
                "segment pairs have width {}, encoder expects {}",
                batch.input_dim(),
                self.net.input_dim
            )));
        }
        let mut g = Graph::new();
        let p = g.bind_frozen(&self.params);
        let vars = self.net.forward(&mut g, &p, &batch.steps);
        let mut out = vec![Vec::with_capacity(batch.history_len()); batch.len()];
        for (mv, lv) in vars.mean.iter().zip(&vars.log_std) {
            let (mean, log_std) = (g.value(*mv), g.value(*lv));
            if mean.iter().chain(log_std.iter()).any(|v| !v.is_finite()) {
                return Err(EncoderError::NonFinite {
                    context: "encoder activations".to_string(),
                    snapshot: Box::new(self.params.clone()),
                });
            }
            for (b, seq) in out.iter_mut().enumerate() {
                seq.push(GaussianLatent::new(
                    mean.row(b).to_vec(),
                    log_std.row(b).to_vec(),
                ));
            }
        }
        Ok(out)
    }

    /// Mean of the final-step posterior for each segment of a batch.
    pub fn representations(&self, batch: &SegmentBatch) -> Result<Vec<Vec<f64>>, EncoderError> {
        Ok(self
            .encode_batch(batch)?
            .into_iter()
            .map(|seq| seq.last().expect("history_len ≥ 1").mean.clone())
            .collect())
    }

    /// Parameter digest used to prove that later stages leave the encoder untouched.
    pub fn param_checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for v in self.params.flatten() {
            h.update(&v.to_le_bytes());
        }
        h.finalize()
    }
}
