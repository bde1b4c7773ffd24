use std::ops::Range;

use ndarray::Array2;

use super::EncoderError;
use crate::dataset::OfflineTask;

/// A length-`H` window of `(previous action, state)` pairs, oldest first.
/// Slots before the episode start are exact zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySegment {
    pairs: Vec<Vec<f64>>,
    valid_len: usize,
}

impl TrajectorySegment {
    /// Left-pads `valid` (oldest first, at most `history_len` pairs) with zeros.
    pub fn new(valid: Vec<Vec<f64>>, history_len: usize) -> Result<Self, EncoderError> {
        if valid.is_empty() || valid.len() > history_len {
            return Err(EncoderError::Shape(format!(
                "segment needs 1..={history_len} pairs, got {}",
                valid.len()
            )));
        }
        let width = valid[0].len();
        if valid.iter().any(|p| p.len() != width) {
            return Err(EncoderError::Shape("pairs differ in width".to_string()));
        }
        let valid_len = valid.len();
        let mut pairs = vec![vec![0.0; width]; history_len - valid_len];
        pairs.extend(valid);
        Ok(Self { pairs, valid_len })
    }

    /// Window ending at episode-local state `k` of `episode`. States are
    /// `s_0 … s_L`, where `s_L` is the next state of the episode's last
    /// transition; the pair for state `s_k` is `(a_{k−1}, s_k)` with `a_{−1} = 0`.
    pub fn from_episode(
        task: &OfflineTask,
        episode: &Range<usize>,
        k: usize,
        history_len: usize,
    ) -> Self {
        let len = episode.len();
        assert!(k <= len, "state index {k} beyond episode of length {len}");
        let first = (k + 1).saturating_sub(history_len);
        let action_dim = task.action(episode.start).len();
        let pairs = (first..=k)
            .map(|j| {
                let mut pair = if j == 0 {
                    vec![0.0; action_dim]
                } else {
                    task.action(episode.start + j - 1).to_vec()
                };
                if j < len {
                    pair.extend_from_slice(task.state(episode.start + j));
                } else {
                    pair.extend_from_slice(task.next_state(episode.start + len - 1));
                }
                pair
            })
            .collect();
        Self::new(pairs, history_len).expect("window is well formed")
    }

    pub fn pairs(&self) -> &[Vec<f64>] {
        &self.pairs
    }

    pub fn valid_len(&self) -> usize {
        self.valid_len
    }

    pub fn history_len(&self) -> usize {
        self.pairs.len()
    }

    pub fn width(&self) -> usize {
        self.pairs[0].len()
    }
}

/// Segments stacked slot by slot: `steps[t]` is `batch × input_dim`.
#[derive(Clone, Debug)]
pub struct SegmentBatch {
    pub steps: Vec<Array2<f64>>,
    pub valid_len: Vec<usize>,
}

impl SegmentBatch {
    pub fn from_segments(
        segments: &[TrajectorySegment],
        input_dim: usize,
    ) -> Result<Self, EncoderError> {
        let first = segments
            .first()
            .ok_or_else(|| EncoderError::Shape("empty batch".to_string()))?;
        let h = first.history_len();
        for s in segments {
            if s.history_len() != h {
                return Err(EncoderError::Shape(
                    "segments differ in history length".to_string(),
                ));
            }
            if s.width() != input_dim {
                return Err(EncoderError::Shape(format!(
                    "segment pairs have width {}, encoder expects {input_dim}",
                    s.width()
                )));
            }
        }
        let steps = (0..h)
            .map(|t| {
                Array2::from_shape_fn((segments.len(), input_dim), |(b, j)| {
                    segments[b].pairs[t][j]
                })
            })
            .collect();
        Ok(Self {
            steps,
            valid_len: segments.iter().map(|s| s.valid_len).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.valid_len.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid_len.is_empty()
    }

    pub fn history_len(&self) -> usize {
        self.steps.len()
    }

    pub fn input_dim(&self) -> usize {
        self.steps[0].ncols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, ControllerProfile};
    use crate::dynamics::{DynamicsSpec, EnvId};

    #[test]
    fn padding_is_literal_zeros() {
        let s = TrajectorySegment::new(vec![vec![1.0, 2.0], vec![3.0, 4.0]], 4).unwrap();
        assert_eq!(s.pairs()[0], vec![0.0, 0.0]);
        assert_eq!(s.pairs()[1], vec![0.0, 0.0]);
        assert_eq!(s.pairs()[3], vec![3.0, 4.0]);
        assert_eq!(s.valid_len(), 2);
        assert!(TrajectorySegment::new(vec![vec![0.0]; 5], 4).is_err());
        assert!(TrajectorySegment::new(vec![], 4).is_err());
    }

    #[test]
    fn episode_windows_follow_the_pair_ordering() {
        let spec = DynamicsSpec::new(EnvId::PointmassDamping, 0.0);
        let p = ControllerProfile::nominal(EnvId::PointmassDamping);
        let d = generate_dataset(0, &spec, &p, 260, 1).unwrap();
        let task = d.offline();
        let eps = task.episodes().to_vec();

        let w0 = TrajectorySegment::from_episode(&task, &eps[0], 0, 8);
        assert_eq!(w0.valid_len(), 1);
        assert!(w0.pairs()[..7].iter().all(|p| p.iter().all(|&v| v == 0.0)));
        let mut expect = vec![0.0];
        expect.extend_from_slice(task.state(0));
        assert_eq!(w0.pairs()[7], expect);

        let w = TrajectorySegment::from_episode(&task, &eps[1], 20, 8);
        assert_eq!(w.valid_len(), 8);
        let base = eps[1].start;
        let mut last = task.action(base + 19).to_vec();
        last.extend_from_slice(task.state(base + 20));
        assert_eq!(w.pairs()[7], last);
        let mut oldest = task.action(base + 12).to_vec();
        oldest.extend_from_slice(task.state(base + 13));
        assert_eq!(w.pairs()[0], oldest);

        let end = TrajectorySegment::from_episode(&task, &eps[0], 200, 8);
        let mut tail = task.action(199).to_vec();
        tail.extend_from_slice(task.next_state(199));
        assert_eq!(end.pairs()[7], tail);
    }
}
