//! Offline transitions labelled by the frozen encoder.

use ndarray::Array2;

use super::{PolicyDims, PolicyError, ReplayData};
use crate::dataset::OfflineTask;
use crate::encoder::{EncoderState, SegmentBatch, TrajectorySegment};

const CHUNK: usize = 1024;

/// Labels every transition `t` with the final-step posterior mean of the window
/// ending at its state, and with the label of the following state as `z_next`.
pub fn label_dataset(
    encoder: &EncoderState,
    task: &OfflineTask,
) -> Result<ReplayData, PolicyError> {
    let env = task.env_id;
    if let Some(trained_on) = encoder.env_id {
        if trained_on != env {
            return Err(PolicyError::EnvMismatch(format!(
                "encoder was trained on {}, dataset is {}",
                trained_on.name(),
                env.name()
            )));
        }
    }
    let (sd, ad) = (env.state_dim(), env.action_dim());
    if encoder.net.input_dim != sd + ad {
        return Err(PolicyError::EnvMismatch(format!(
            "encoder reads pairs of width {}, {} produces {}",
            encoder.net.input_dim,
            env.name(),
            sd + ad
        )));
    }
    let h = encoder.config.history_len;
    let m = encoder.config.latent_dim;
    let n = task.len();

    // Window `k` of each episode ends at episode-local state k, for k = 0..=L.
    let mut windows = Vec::with_capacity(n + task.episodes().len());
    for ep in task.episodes() {
        for k in 0..=ep.len() {
            windows.push(TrajectorySegment::from_episode(task, ep, k, h));
        }
    }
    let mut latents = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(CHUNK) {
        let batch = SegmentBatch::from_segments(chunk, sd + ad)?;
        latents.extend(encoder.representations(&batch)?);
    }

    let mut data = ReplayData {
        dims: PolicyDims {
            state_dim: sd,
            action_dim: ad,
            latent_dim: m,
            action_bound: env.action_bound(),
        },
        states: Array2::zeros((n, sd)),
        actions: Array2::zeros((n, ad)),
        rewards: Array2::zeros((n, 1)),
        next_states: Array2::zeros((n, sd)),
        dones: Array2::zeros((n, 1)),
        z: Array2::zeros((n, m)),
        z_next: Array2::zeros((n, m)),
        task_index: vec![task.task_index; n],
    };
    let mut w = 0;
    for ep in task.episodes() {
        for (k, i) in ep.clone().enumerate() {
            let row = |a: &mut Array2<f64>, v: &[f64]| {
                a.row_mut(i).assign(&ndarray::ArrayView1::from(v));
            };
            row(&mut data.states, task.state(i));
            row(&mut data.actions, task.action(i));
            row(&mut data.next_states, task.next_state(i));
            row(&mut data.z, &latents[w + k]);
            row(&mut data.z_next, &latents[w + k + 1]);
            data.rewards[[i, 0]] = task.reward(i);
            data.dones[[i, 0]] = f64::from(u8::from(task.done(i)));
        }
        w += ep.len() + 1;
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, ControllerProfile};
    use crate::dynamics::{DynamicsSpec, EnvId};
    use crate::encoder::EncoderConfig;

    fn small_encoder(env: EnvId) -> EncoderState {
        let cfg = EncoderConfig {
            input_embed_width: 8,
            gru_width: 6,
            head_width: 6,
            history_len: 4,
            ..EncoderConfig::default()
        };
        EncoderState::new(&cfg, env.state_dim() + env.action_dim(), 2, 11)
    }

    fn dataset(env: EnvId, n: usize, seed: u64) -> crate::dataset::TaskDataset {
        let spec = DynamicsSpec::new(env, 0.3);
        generate_dataset(0, &spec, &ControllerProfile::nominal(env), n, seed).unwrap()
    }

    #[test]
    fn first_step_uses_zero_padded_window() {
        let enc = small_encoder(EnvId::PendulumGravity);
        let d = dataset(EnvId::PendulumGravity, 400, 1);
        let task = d.offline();
        let data = label_dataset(&enc, &task).unwrap();
        let mut pair = vec![0.0];
        pair.extend_from_slice(task.state(0));
        let seg = TrajectorySegment::new(vec![pair], 4).unwrap();
        let z = enc.encode(&seg).unwrap().last().unwrap().mean.clone();
        assert_eq!(data.z.row(0).to_vec(), z);
        assert_eq!(seg.pairs()[0], vec![0.0; 4]);
    }

    #[test]
    fn next_label_is_following_label_within_episode() {
        let enc = small_encoder(EnvId::PendulumGravity);
        let d = dataset(EnvId::PendulumGravity, 400, 2);
        let task = d.offline();
        let data = label_dataset(&enc, &task).unwrap();
        for ep in task.episodes() {
            for i in ep.start..ep.end - 1 {
                assert_eq!(data.z_next.row(i), data.z.row(i + 1));
            }
            let last = ep.end - 1;
            let seg = TrajectorySegment::from_episode(&task, ep, ep.len(), 4);
            let z = enc.encode(&seg).unwrap().last().unwrap().mean.clone();
            assert_eq!(data.z_next.row(last).to_vec(), z);
        }
        assert_eq!(data.dones[[199, 0]], 1.0);
        data.validate().unwrap();
    }

    #[test]
    fn identical_prefixes_give_identical_labels() {
        let enc = small_encoder(EnvId::PendulumGravity);
        let d = dataset(EnvId::PendulumGravity, 200, 3);
        let mut twice = d.clone();
        let mut second = d.transitions.clone();
        for t in &mut second {
            t.episode_id += 1;
        }
        twice.transitions.extend(second);
        let data = label_dataset(&enc, &twice.offline()).unwrap();
        for i in 0..200 {
            assert_eq!(data.z.row(i), data.z.row(200 + i));
        }
    }

    #[test]
    fn relabelling_is_bitwise_identical_and_leaves_encoder_untouched() {
        let enc = small_encoder(EnvId::SpringcartMass);
        let before = enc.param_checksum();
        let d = dataset(EnvId::SpringcartMass, 300, 4);
        let a = label_dataset(&enc, &d.offline()).unwrap();
        let b = label_dataset(&enc, &d.offline()).unwrap();
        assert_eq!(a, b);
        assert_eq!(enc.param_checksum(), before);
    }

    #[test]
    fn env_mismatch_is_rejected() {
        let enc = small_encoder(EnvId::PendulumGravity);
        let d = dataset(EnvId::SpringcartMass, 200, 5);
        assert!(matches!(
            label_dataset(&enc, &d.offline()),
            Err(PolicyError::EnvMismatch(_))
        ));

        let mut enc = small_encoder(EnvId::SpringcartMass);
        enc.env_id = Some(EnvId::PointmassDamping);
        assert!(matches!(
            label_dataset(&enc, &d.offline()),
            Err(PolicyError::EnvMismatch(_))
        ));
    }
}
