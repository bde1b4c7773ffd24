use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{debias_term, distortion_term};
use super::{EncoderConfig, EncoderError, EncoderState, SegmentBatch, TrajectorySegment};
use crate::dataset::OfflineTask;
use crate::nn::{Adam, Graph};
use crate::report::{write_csv, CsvError};
use crate::rng::{derive_seed, stream};

/// One row of the encoder loss curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub l_dist: f64,
    pub l_debias: f64,
    pub l_total: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedEncoder {
    pub state: EncoderState,
    pub log: Vec<LossRow>,
}

/// Uniform over all windows of a task; windows stay inside one episode.
pub fn sample_window(
    task: &OfflineTask,
    history_len: usize,
    rng: &mut ChaCha8Rng,
) -> TrajectorySegment {
    let k = rng.random_range(0..task.len());
    let episodes = task.episodes();
    let e = episodes.partition_point(|r| r.end <= k);
    let ep = &episodes[e];
    TrajectorySegment::from_episode(task, ep, k - ep.start, history_len)
}

/// Offline encoder training: a warm-up pass seeds every bank entry, then each
/// step samples a batch, refreshes the bank from the batch's final-step means,
/// and takes one optimizer step on `distortion + beta · debias`.
pub fn train_encoder(
    tasks: &[OfflineTask],
    config: &EncoderConfig,
    seed: u64,
) -> Result<TrainedEncoder, EncoderError> {
    config.validate()?;
    if tasks.len() < 2 {
        return Err(EncoderError::Config(format!(
            "encoder training needs at least 2 tasks, got {}",
            tasks.len()
        )));
    }
    let env = tasks[0].env_id;
    if tasks.iter().any(|t| t.env_id != env) {
        return Err(EncoderError::Config(
            "tasks come from different environments".to_string(),
        ));
    }
    if tasks.iter().any(|t| t.is_empty()) {
        return Err(EncoderError::Config("a task dataset is empty".to_string()));
    }
    let h = config.history_len;
    let input_dim = env.state_dim() + env.action_dim();
    let mut state = EncoderState::new(config, input_dim, tasks.len(), derive_seed(seed, &[0]));
    state.env_id = Some(env);
    let mut rng = stream(seed, &[1]);

    let warm: Vec<_> = tasks
        .iter()
        .map(|t| sample_window(t, h, &mut rng))
        .collect();
    let warm = SegmentBatch::from_segments(&warm, input_dim)?;
    for (i, z) in state.representations(&warm)?.iter().enumerate() {
        state.bank.update(i, z);
    }

    let mut adam = Adam::new(&state.params, config.learning_rate);
    let mut log = Vec::with_capacity(config.train_steps);
    for step in 0..config.train_steps {
        let labels: Vec<usize> = (0..config.batch_size)
            .map(|_| rng.random_range(0..tasks.len()))
            .collect();
        let segments: Vec<_> = labels
            .iter()
            .map(|&i| sample_window(&tasks[i], h, &mut rng))
            .collect();
        let batch = SegmentBatch::from_segments(&segments, input_dim)?;

        let mut g = Graph::new();
        let p = g.bind(&state.params);
        let lat = state.net.forward(&mut g, &p, &batch.steps);
        let z = *lat.mean.last().expect("history_len ≥ 1");

        let previous_bank = state.bank.clone();
        for (b, &i) in labels.iter().enumerate() {
            let zb = g.value(z).row(b).to_vec();
            state.bank.update(i, &zb);
        }
        let anchors = state.bank.matrix()?;
        let dist = distortion_term(&mut g, z, &labels, &anchors, config.kernel_bandwidth);
        let debias = debias_term(&mut g, &lat, &batch.valid_len, config.debias_stop_grad);
        let weighted = g.scale(debias, config.beta);
        let total = g.add(dist, weighted);

        let row = LossRow {
            step,
            l_dist: g.scalar(dist),
            l_debias: g.scalar(debias),
            l_total: g.scalar(total),
        };
        let grads = g.backward(total).for_bound(&p);
        if !row.l_total.is_finite() || grads.iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            state.bank = previous_bank;
            return Err(EncoderError::Diverged {
                step,
                last_good: Box::new(state),
                log,
            });
        }
        adam.step(&mut state.params, &grads);
        if step % 100 == 0 || step + 1 == config.train_steps {
            log::info!(
                "encoder step {step}: dist {:.4} debias {:.4} total {:.4}",
                row.l_dist,
                row.l_debias,
                row.l_total
            );
        }
        log.push(row);
    }
    Ok(TrainedEncoder { state, log })
}

pub fn write_loss_csv(
    path: &Path,
    meta: &serde_json::Value,
    log: &[LossRow],
) -> Result<(), CsvError> {
    write_csv(path, meta, log)
}
