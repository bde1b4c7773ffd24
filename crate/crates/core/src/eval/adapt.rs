//! The online adaptation loop: a zero-initialized window of
//! `(previous action, state)` pairs is re-encoded after every step and the
//! deterministic actor acts on the newest code.

use serde::{Deserialize, Serialize};

use super::{ActionSource, ContextEncoder, EvalError};
use crate::dynamics::{self, Schedule};
use crate::encoder::TrajectorySegment;

/// One step of a tracking trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackRow {
    pub step: usize,
    pub mu_normalized: f64,
    pub z: Vec<f64>,
    pub post_switch: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub rows: Vec<TrackRow>,
    pub switch_steps: Vec<usize>,
    pub window: usize,
}

/// Flat CSV form of a [`TrackRow`]; only the first two latent coordinates are kept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackCsvRow {
    pub episode: usize,
    pub step: usize,
    pub mu_normalized: f64,
    pub z1: f64,
    pub z2: f64,
    pub post_switch: bool,
}

impl TrackRecord {
    pub fn csv_rows(&self, episode: usize) -> Vec<TrackCsvRow> {
        self.rows
            .iter()
            .map(|r| TrackCsvRow {
                episode,
                step: r.step,
                mu_normalized: r.mu_normalized,
                z1: r.z.first().copied().unwrap_or(0.0),
                z2: r.z.get(1).copied().unwrap_or(0.0),
                post_switch: r.post_switch,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptationOutcome {
    pub episode_return: f64,
    pub track: TrackRecord,
    /// Set when the simulator diverged; `track` then holds the steps completed so far.
    pub failed: bool,
}

/// Whether `step` falls within `window` steps after any switch.
pub fn post_switch(step: usize, switches: &[usize], window: usize) -> bool {
    switches.iter().any(|&s| step >= s && step < s + window)
}

/// Runs one episode of `episode_length` steps under `schedule`.
pub fn run_adaptation(
    encoder: &dyn ContextEncoder,
    actor: &dyn ActionSource,
    schedule: &Schedule,
    episode_length: usize,
    seed: u64,
) -> Result<AdaptationOutcome, EvalError> {
    let h = encoder.history_len();
    let env = schedule.env_id();
    if let Some(expected) = encoder.env_id() {
        if expected != env {
            return Err(EvalError::EnvMismatch(format!(
                "encoder expects {}, schedule runs {}",
                expected.name(),
                env.name()
            )));
        }
    }
    let switches = schedule.switch_steps();
    let ad = env.action_dim();
    let mut state = dynamics::reset_with_horizon(schedule.spec_at(0), seed, episode_length);
    let pair =
        |action: &[f64], obs: &[f64]| -> Vec<f64> { action.iter().chain(obs).copied().collect() };
    let mut pairs = vec![pair(&vec![0.0; ad], &state.observation)];
    let mut rows = Vec::with_capacity(episode_length);
    let mut failed = false;

    for t in 0..episode_length {
        let start = pairs.len().saturating_sub(h);
        let window = TrajectorySegment::new(pairs[start..].to_vec(), h)?;
        let z = encoder
            .encode_windows(std::slice::from_ref(&window))?
            .remove(0);
        let spec = schedule.spec_at(t);
        let action = actor.act(&state.observation, &z);
        rows.push(TrackRow {
            step: t,
            mu_normalized: spec.normalized_mu(),
            z: z.clone(),
            post_switch: post_switch(t, &switches, h),
        });
        match dynamics::step(&state, spec, &action) {
            Ok(out) => {
                let bound = env.action_bound();
                let applied: Vec<f64> = action.iter().map(|a| a.clamp(-bound, bound)).collect();
                pairs.push(pair(&applied, &out.state.observation));
                state = out.state;
            }
            Err(e) => {
                log::warn!("episode diverged at step {t}: {e}");
                failed = true;
                break;
            }
        }
    }
    Ok(AdaptationOutcome {
        episode_return: state.episode_return,
        track: TrackRecord {
            rows,
            switch_steps: switches,
            window: h,
        },
        failed,
    })
}

/// Post-switch latent speed relative to the speed elsewhere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedReport {
    pub ratio: f64,
    /// The latent never moved; the ratio is reported as 1.
    pub zero_motion: bool,
    /// The ratio hit the configured cap.
    pub capped: bool,
}

pub const SPEED_RATIO_CAP: f64 = 1e6;

/// Mean `‖z_t − z_{t−1}‖` over the `window` steps after each switch divided by
/// the mean over every other step (`t ≥ 1`).
pub fn adaptation_speed(track: &TrackRecord, window: usize) -> Result<SpeedReport, EvalError> {
    if track.switch_steps.is_empty() {
        return Err(EvalError::NoSwitches);
    }
    let (mut post, mut n_post, mut other, mut n_other) = (0.0, 0usize, 0.0, 0usize);
    for pair in track.rows.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        let d = prev
            .z
            .iter()
            .zip(&cur.z)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        if post_switch(cur.step, &track.switch_steps, window) {
            post += d;
            n_post += 1;
        } else {
            other += d;
            n_other += 1;
        }
    }
    let post = if n_post > 0 {
        post / n_post as f64
    } else {
        0.0
    };
    let other = if n_other > 0 {
        other / n_other as f64
    } else {
        0.0
    };
    Ok(if post == 0.0 && other == 0.0 {
        SpeedReport {
            ratio: 1.0,
            zero_motion: true,
            capped: false,
        }
    } else if other == 0.0 || post / other >= SPEED_RATIO_CAP {
        SpeedReport {
            ratio: SPEED_RATIO_CAP,
            zero_motion: false,
            capped: true,
        }
    } else {
        SpeedReport {
            ratio: post / other,
            zero_motion: false,
            capped: false,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DynamicsSpec, EnvId, Regime, RegimeSampler};
    use crate::eval::stubs::{ConstantEncoder, ZeroActor};

    fn trace(zs: &[f64], switches: Vec<usize>) -> TrackRecord {
        TrackRecord {
            rows: zs
                .iter()
                .enumerate()
                .map(|(t, &z)| TrackRow {
                    step: t,
                    mu_normalized: 0.5,
                    z: vec![z, 0.0],
                    post_switch: post_switch(t, &switches, 8),
                })
                .collect(),
            switch_steps: switches,
            window: 8,
        }
    }

    #[test]
    fn stationary_episode_has_full_length_and_one_mu() {
        let spec = DynamicsSpec::new(EnvId::PendulumGravity, 0.4);
        let enc = ConstantEncoder::new(8, vec![0.1, 0.2]);
        let out = run_adaptation(&enc, &ZeroActor(1), &Schedule::stationary(spec), 200, 3).unwrap();
        assert_eq!(out.track.rows.len(), 200);
        assert!(!out.failed);
        assert!(out
            .track
            .rows
            .iter()
            .all(|r| r.mu_normalized == spec.normalized_mu()));
        assert!(out.track.rows.iter().all(|r| !r.post_switch));
    }

    #[test]
    fn post_switch_flags() {
        let mut sampler = RegimeSampler::new(Regime::Nonstationary, 1).with_switch_interval(50);
        let mut sched = sampler
            .schedule_nonstationary(EnvId::PendulumGravity, 150)
            .unwrap();
        sched.segments.truncate(3);
        assert_eq!(sched.switch_steps(), vec![50, 100]);
        let enc = ConstantEncoder::new(8, vec![0.0, 0.0]);
        let out = run_adaptation(&enc, &ZeroActor(1), &sched, 150, 0).unwrap();
        let flagged: Vec<usize> = out
            .track
            .rows
            .iter()
            .filter(|r| r.post_switch)
            .map(|r| r.step)
            .collect();
        let want: Vec<usize> = (50..58).chain(100..108).collect();
        assert_eq!(flagged, want);
    }

    #[test]
    fn windows_are_zero_padded_before_history_fills() {
        use std::cell::RefCell;
        struct Recorder(RefCell<Vec<TrajectorySegment>>);
        impl ContextEncoder for Recorder {
            fn history_len(&self) -> usize {
                4
            }
            fn latent_dim(&self) -> usize {
                1
            }
            fn encode_windows(&self, w: &[TrajectorySegment]) -> Result<Vec<Vec<f64>>, EvalError> {
                self.0.borrow_mut().extend_from_slice(w);
                Ok(vec![vec![0.0]; w.len()])
            }
        }
        let rec = Recorder(RefCell::new(vec![]));
        let spec = DynamicsSpec::new(EnvId::SpringcartMass, 0.0);
        run_adaptation(&rec, &ZeroActor(1), &Schedule::stationary(spec), 10, 1).unwrap();
        let windows = rec.0.into_inner();
        for (t, w) in windows.iter().enumerate() {
            let zeros = w
                .pairs()
                .iter()
                .take_while(|p| p.iter().all(|v| *v == 0.0))
                .count();
            assert!(zeros >= 4usize.saturating_sub(t + 1));
            assert_eq!(w.valid_len(), (t + 1).min(4));
        }
        let first = &windows[0].pairs()[3];
        assert_eq!(first[0], 0.0);
    }

    #[test]
    fn identical_seeds_identical_returns() {
        let spec = DynamicsSpec::new(EnvId::PointmassDamping, -0.5);
        let enc = ConstantEncoder::new(8, vec![0.0, 0.0]);
        let a = run_adaptation(&enc, &ZeroActor(1), &Schedule::stationary(spec), 100, 9).unwrap();
        let b = run_adaptation(&enc, &ZeroActor(1), &Schedule::stationary(spec), 100, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_trace_reports_zero_motion() {
        let r = adaptation_speed(&trace(&[0.3; 100], vec![50]), 8).unwrap();
        assert_eq!(r.ratio, 1.0);
        assert!(r.zero_motion);
    }

    #[test]
    fn jumps_only_at_switches_hit_the_cap() {
        let zs: Vec<f64> = (0..150).map(|t| (t / 50) as f64).collect();
        let r = adaptation_speed(&trace(&zs, vec![50, 100]), 8).unwrap();
        assert_eq!(r.ratio, SPEED_RATIO_CAP);
        assert!(r.capped);
    }

    #[test]
    fn ratio_of_means() {
        // Steps 1..=9 move by 1 except the two right after the switch at 5 (window 2), which move by 4.
        let mut zs = vec![0.0];
        for t in 1..10 {
            let step = if t == 5 || t == 6 { 4.0 } else { 1.0 };
            zs.push(zs[t - 1] + step);
        }
        let mut tr = trace(&zs, vec![5]);
        tr.window = 2;
        let r = adaptation_speed(&tr, 2).unwrap();
        assert!((r.ratio - 4.0).abs() < 1e-12);
    }

    #[test]
    fn no_switches_is_an_error() {
        assert!(matches!(
            adaptation_speed(&trace(&[0.0; 10], vec![]), 8),
            Err(EvalError::NoSwitches)
        ));
    }
}
