use ndarray::Array2;

use super::EncoderError;

/// Per-task exponential moving averages of the final-step representation.
#[derive(Clone, Debug, PartialEq)]
pub struct MovingAverageBank {
    entries: Vec<Vec<f64>>,
    initialized: Vec<bool>,
    momentum: f64,
}

impl MovingAverageBank {
    pub fn new(n_tasks: usize, latent_dim: usize, momentum: f64) -> Self {
        Self {
            entries: vec![vec![0.0; latent_dim]; n_tasks],
            initialized: vec![false; n_tasks],
            momentum,
        }
    }

    /// Bank with every entry set; used for fixtures and checkpoint restore.
    pub fn from_entries(entries: Vec<Vec<f64>>, momentum: f64) -> Self {
        let n = entries.len();
        Self {
            entries,
            initialized: vec![true; n],
            momentum,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn entry(&self, i: usize) -> &[f64] {
        &self.entries[i]
    }

    pub fn is_initialized(&self, i: usize) -> bool {
        self.initialized[i]
    }

    pub fn fully_initialized(&self) -> bool {
        self.initialized.iter().all(|&b| b)
    }

    /// `z̄_i ← λ·z + (1 − λ)·z̄_i`; the first observation sets `z̄_i = z`.
    pub fn update(&mut self, i: usize, z: &[f64]) {
        let lambda = self.momentum;
        if !self.initialized[i] {
            self.entries[i] = z.to_vec();
            self.initialized[i] = true;
        } else {
            for (e, &v) in self.entries[i].iter_mut().zip(z) {
                *e = lambda * v + (1.0 - lambda) * *e;
            }
        }
    }

    /// Entries as an `n_tasks × latent_dim` matrix.
    pub fn matrix(&self) -> Result<Array2<f64>, EncoderError> {
        if let Some(i) = self.initialized.iter().position(|&b| !b) {
            return Err(EncoderError::UninitializedBank(i));
        }
        let m = self.entries.first().map_or(0, Vec::len);
        Ok(Array2::from_shape_fn((self.entries.len(), m), |(i, d)| {
            self.entries[i][d]
        }))
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn momentum_one_copies() {
        let mut b = MovingAverageBank::from_entries(vec![vec![3.0, 3.0]], 1.0);
        b.update(0, &[1.0, -1.0]);
        assert_eq!(b.entry(0), &[1.0, -1.0]);
    }

    #[test]
    fn single_blend_from_zero() {
        let mut b = MovingAverageBank::from_entries(vec![vec![0.0, 0.0], vec![5.0, 5.0]], 0.1);
        b.update(0, &[1.0, 0.0]);
        assert_eq!(b.entry(0), &[0.1, 0.0]);
        assert_eq!(b.entry(1), &[5.0, 5.0]);
    }

    #[test]
    fn repeated_updates_match_closed_form() {
        let lambda: f64 = 0.1;
        let z = [0.7, -0.4];
        let mut b = MovingAverageBank::from_entries(vec![vec![0.0, 0.0]], lambda);
        for k in 1..=40 {
            b.update(0, &z);
            let f = 1.0 - (1.0 - lambda).powi(k);
            for d in 0..2 {
                assert!((b.entry(0)[d] - z[d] * f).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn first_observation_initializes() {
        let mut b = MovingAverageBank::new(2, 2, 0.1);
        assert!(matches!(
            b.matrix(),
            Err(EncoderError::UninitializedBank(0))
        ));
        b.update(0, &[0.3, 0.4]);
        assert_eq!(b.entry(0), &[0.3, 0.4]);
        assert!(matches!(
            b.matrix(),
            Err(EncoderError::UninitializedBank(1))
        ));
        b.update(1, &[0.0, 1.0]);
        assert_eq!(b.matrix().unwrap().dim(), (2, 2));
    }
}
