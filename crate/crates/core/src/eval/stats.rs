//! Rank correlation, nearest-neighbour retrieval and a multinomial logistic probe.

use rand::seq::SliceRandom;

use crate::rng::stream;

/// Average ranks (ties share the mean rank), 0-based.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            out[k] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Spearman rank correlation; 0 when either input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman inputs differ in length");
    pearson(&ranks(a), &ranks(b))
}

/// Largest `|ρ|` over latent coordinates.
pub fn best_abs_spearman(z: &[Vec<f64>], target: &[f64]) -> f64 {
    let dim = z.first().map_or(0, |v| v.len());
    (0..dim)
        .map(|d| {
            let col: Vec<f64> = z.iter().map(|v| v[d]).collect();
            spearman(&col, target).abs()
        })
        .fold(0.0, f64::max)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Even-indexed points form the reference set, odd-indexed points are
/// queries; returns the fraction of queries whose nearest reference shares
/// their label.
pub fn one_nn_accuracy(z: &[Vec<f64>], labels: &[usize]) -> f64 {
    assert_eq!(z.len(), labels.len());
    let refs: Vec<usize> = (0..z.len()).step_by(2).collect();
    let queries: Vec<usize> = (1..z.len()).step_by(2).collect();
    if refs.is_empty() || queries.is_empty() {
        return 0.0;
    }
    let hits = queries
        .iter()
        .filter(|&&q| {
            let best = refs
                .iter()
                .copied()
                .min_by(|&a, &b| sq_dist(&z[a], &z[q]).total_cmp(&sq_dist(&z[b], &z[q])))
                .expect("non-empty reference set");
            labels[best] == labels[q]
        })
        .count();
    hits as f64 / queries.len() as f64
}

#[derive(Clone, Copy, Debug)]
pub struct ProbeSettings {
    pub iterations: usize,
    pub learning_rate: f64,
    pub train_fraction: f64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            iterations: 2000,
            learning_rate: 2.0,
            train_fraction: 0.8,
        }
    }
}

/// Held-out accuracy of a softmax-linear classifier trained by full-batch
/// gradient descent on standardized features. The split is a seeded shuffle.
pub fn logistic_probe_accuracy(
    z: &[Vec<f64>],
    labels: &[usize],
    settings: &ProbeSettings,
    seed: u64,
) -> f64 {
    assert_eq!(z.len(), labels.len());
    let n = z.len();
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let d = z.first().map_or(0, |v| v.len());
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, &[0x9e0be]));
    let cut = ((n as f64 * settings.train_fraction).round() as usize).clamp(1, n.saturating_sub(1));
    let (train, test) = order.split_at(cut);
    if test.is_empty() || k == 0 {
        return 0.0;
    }

    let mut mean = vec![0.0; d];
    let mut scale = vec![0.0; d];
    for &i in train {
        for j in 0..d {
            mean[j] += z[i][j] / train.len() as f64;
        }
    }
    for &i in train {
        for j in 0..d {
            scale[j] += (z[i][j] - mean[j]).powi(2) / train.len() as f64;
        }
    }
    for s in &mut scale {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    let feat = |i: usize| -> Vec<f64> {
        let mut x: Vec<f64> = (0..d).map(|j| (z[i][j] - mean[j]) / scale[j]).collect();
        x.push(1.0);
        x
    };
    let xs: Vec<Vec<f64>> = (0..n).map(feat).collect();
    let logits = |w: &[Vec<f64>], x: &[f64]| -> Vec<f64> {
        w.iter()
            .map(|wc| wc.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    };

    let mut w = vec![vec![0.0; d + 1]; k];
    for _ in 0..settings.iterations {
        let mut grad = vec![vec![0.0; d + 1]; k];
        for &i in train {
            let l = logits(&w, &xs[i]);
            let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = l.iter().map(|v| (v - m).exp()).sum();
            for c in 0..k {
                let p = (l[c] - m).exp() / total - f64::from(u8::from(labels[i] == c));
                for j in 0..=d {
                    grad[c][j] += p * xs[i][j] / train.len() as f64;
                }
            }
        }
        for c in 0..k {
            for j in 0..=d {
                w[c][j] -= settings.learning_rate * grad[c][j];
            }
        }
    }
    let hits = test
        .iter()
        .filter(|&&i| {
            let l = logits(&w, &xs[i]);
            let pred = (0..k)
                .max_by(|&a, &b| l[a].total_cmp(&l[b]))
                .expect("k ≥ 1");
            pred == labels[i]
        })
        .count();
    hits as f64 / test.len() as f64
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}
