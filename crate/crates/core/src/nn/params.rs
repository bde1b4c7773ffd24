use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Bound, Graph, Var};

/// Named dense parameter tensors in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Array2<f64>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor and returns its id.
    pub fn push(&mut self, name: impl Into<String>, tensor: Array2<f64>) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Array2<f64>] {
        &self.tensors
    }

    pub fn tensor(&self, id: usize) -> &Array2<f64> {
        &self.tensors[id]
    }

    pub fn tensor_mut(&mut self, id: usize) -> &mut Array2<f64> {
        &mut self.tensors[id]
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// All scalars in parameter order, row-major.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.iter().copied())
            .collect()
    }

    /// Overwrites all scalars from a flat slice produced by [`ParamSet::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.count(), "flat parameter length mismatch");
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.len();
            for (dst, src) in t.iter_mut().zip(&flat[offset..offset + n]) {
                *dst = *src;
            }
            offset += n;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Rounds every scalar through `f32`, matching what a checkpoint stores.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            t.mapv_inplace(|v| v as f32 as f64);
        }
    }

    /// `self ← tau·online + (1 − tau)·self`.
    pub fn polyak_from(&mut self, online: &ParamSet, tau: f64) {
        for (t, o) in self.tensors.iter_mut().zip(&online.tensors) {
            ndarray::Zip::from(t)
                .and(o)
                .for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
        }
    }
}

/// Uniform(−1/√fan_in, 1/√fan_in) weights and biases.
pub fn uniform_init(rng: &mut impl Rng, fan_in: usize, shape: (usize, usize)) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_fn(shape, |_| rng.random_range(-bound..bound))
}

/// A dense affine layer `x·W + b` whose tensors live in a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = params.push(
            format!("{name}.weight"),
            uniform_init(rng, fan_in, (fan_in, fan_out)),
        );
        let bias = params.push(
            format!("{name}.bias"),
            uniform_init(rng, fan_in, (1, fan_out)),
        );
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let h = g.matmul(x, p.var(self.weight));
        g.add_row(h, p.var(self.bias))
    }
}

/// Fully connected stack with ReLU between layers and a linear output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `sizes = [input, hidden…, output]`.
    pub fn new(params: &mut ParamSet, name: &str, sizes: &[usize], rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(params, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, p, h);
            if i + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        h
    }

    pub fn output_layer(&self) -> &Linear {
        self.layers.last().expect("at least one layer")
    }
}

/// First-order adaptive-moment optimizer with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| Array2::zeros(t.dim()))
                .collect::<Vec<_>>()
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Array2<f64>]) {
        assert_eq!(grads.len(), params.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params
            .tensors
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
    }
}
