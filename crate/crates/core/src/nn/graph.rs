//! A small tape-based reverse-mode differentiator over dense 2-D `f64` arrays.
//!
//! Every operation appends a node to the tape; [`Graph::backward`] walks the
//! tape in reverse and accumulates adjoints. Nodes created from constants do
//! not require gradients, and whole constant sub-expressions are skipped
//! during the backward sweep.

use ndarray::{concatenate, s, Array2, Axis, Zip};

use super::params::ParamSet;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Softplus(Var),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    SumCols(Var),
    LogSumExpCols(Var),
    PickCols(Var, Vec<usize>),
    BlocksToCols(Var, usize),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Parameters of one [`ParamSet`] placed on a graph as gradient-carrying leaves.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: usize) -> Var {
        self.vars[id]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Adjoints produced by one backward sweep.
#[derive(Debug)]
pub struct Grads {
    adjoints: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Grads {
    /// Gradient of the root with respect to `v`; zeros when `v` did not influence it.
    pub fn get(&self, v: Var) -> Array2<f64> {
        match &self.adjoints[v.0] {
            Some(g) => g.as_standard_layout().into_owned(),
            None => Array2::zeros(self.shapes[v.0]),
        }
    }

    /// Gradients for every parameter of a bound set, in parameter order.
    pub fn for_bound(&self, bound: &Bound) -> Vec<Array2<f64>> {
        bound.vars.iter().map(|&v| self.get(v)).collect()
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant leaf; never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that accumulates a gradient.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Copies every tensor of `params` onto the graph as a gradient leaf.
    pub fn bind(&mut self, params: &ParamSet) -> Bound {
        let vars = params
            .tensors()
            .iter()
            .map(|t| self.leaf(t.clone()))
            .collect();
        Bound { vars }
    }

    /// Copies every tensor of `params` onto the graph as constants.
    pub fn bind_frozen(&mut self, params: &ParamSet) -> Bound {
        let vars = params
            .tensors()
            .iter()
            .map(|t| self.constant(t.clone()))
            .collect();
        Bound { vars }
    }

    /// Value copy of `v` cut from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    /// `a + b` where `b` is a single row broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(b).0, 1, "add_row expects a 1×k row");
        let value = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::AddRow(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    /// Multiplies every row of `a` (n×k) by the matching entry of `c` (n×1).
    pub fn mul_col(&mut self, a: Var, c: Var) -> Var {
        assert_eq!(self.shape(c).1, 1, "mul_col expects an n×1 column");
        let value = self.value(a) * self.value(c);
        let ng = self.ng(a) || self.ng(c);
        self.push(value, Op::MulCol(a, c), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, k), ng)
    }

    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) + k;
        let ng = self.ng(a);
        self.push(value, Op::Offset(a), ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).mapv(f);
        let ng = self.ng(a);
        self.push(value, op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// `log(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    /// Elementwise clamp; the gradient is zero wherever the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        Zip::from(&mut value)
            .and(self.value(b))
            .for_each(|x, &y| *x = x.min(y));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Minimum(a, b), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        let ng = self.ng(a);
        self.push(value, Op::SliceCols(a, start, end), ng)
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![start..end, ..]).to_owned();
        let ng = self.ng(a);
        self.push(value, Op::SliceRows(a, start, end), ng)
    }

    /// Row sums, n×k → n×1.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ng = self.ng(a);
        self.push(value, Op::SumCols(a), ng)
    }

    /// Row-wise log-sum-exp, n×k → n×1.
    pub fn logsumexp_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut value = Array2::zeros((x.nrows(), 1));
        for (r, row) in x.rows().into_iter().enumerate() {
            value[[r, 0]] = logsumexp(row.iter().copied());
        }
        let ng = self.ng(a);
        self.push(value, Op::LogSumExpCols(a), ng)
    }

    /// Picks column `cols[r]` from each row `r`, n×k → n×1.
    pub fn pick_cols(&mut self, a: Var, cols: &[usize]) -> Var {
        let x = self.value(a);
        assert_eq!(x.nrows(), cols.len());
        let value = Array2::from_shape_fn((cols.len(), 1), |(r, _)| x[[r, cols[r]]]);
        let ng = self.ng(a);
        self.push(value, Op::PickCols(a, cols.to_vec()), ng)
    }

    /// Reads a `(k·n)×1` column as `k` stacked blocks of `n` rows and lays
    /// the blocks side by side: `out[r, j] = a[j·n + r]`, giving `n×k`.
    pub fn blocks_to_cols(&mut self, a: Var, k: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.ncols(), 1, "blocks_to_cols expects a column");
        assert_eq!(
            x.nrows() % k,
            0,
            "row count must be a multiple of the block count"
        );
        let n = x.nrows() / k;
        let value = Array2::from_shape_fn((n, k), |(r, j)| x[[j * n + r, 0]]);
        let ng = self.ng(a);
        self.push(value, Op::BlocksToCols(a, k), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let ng = self.ng(a);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let value = Array2::from_elem((1, 1), x.sum() / x.len() as f64);
        let ng = self.ng(a);
        self.push(value, Op::Mean(a), ng)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Grads {
        assert_eq!(self.shape(root), (1, 1), "backward expects a scalar root");
        let n = root.0 + 1;
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; n];
        adj[root.0] = Some(Array2::ones((1, 1)));

        for i in (0..n).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    adj[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        accumulate(&mut adj, *a, ga);
                    }
                    if self.ng(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        accumulate(&mut adj, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    self.send(&mut adj, *a, || g.clone());
                    self.send(&mut adj, *b, || g.clone());
                }
                Op::AddRow(a, b) => {
                    self.send(&mut adj, *b, || g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    self.send(&mut adj, *a, || g.clone());
                }
                Op::Sub(a, b) => {
                    self.send(&mut adj, *a, || g.clone());
                    self.send(&mut adj, *b, || -&g);
                }
                Op::Mul(a, b) => {
                    self.send(&mut adj, *a, || &g * self.value(*b));
                    self.send(&mut adj, *b, || &g * self.value(*a));
                }
                Op::MulCol(a, c) => {
                    self.send(&mut adj, *a, || &g * self.value(*c));
                    self.send(&mut adj, *c, || {
                        (&g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1))
                    });
                }
                Op::Scale(a, k) => self.send(&mut adj, *a, || &g * *k),
                Op::Offset(a) => self.send(&mut adj, *a, || g.clone()),
                Op::Relu(a) => {
                    let y = &node.value;
                    self.send(&mut adj, *a, || {
                        let mut d = g.clone();
                        Zip::from(&mut d).and(y).for_each(|d, &y| {
                            if y <= 0.0 {
                                *d = 0.0
                            }
                        });
                        d
                    });
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    self.send(&mut adj, *a, || {
                        let mut d = g.clone();
                        Zip::from(&mut d)
                            .and(y)
                            .for_each(|d, &y| *d *= y * (1.0 - y));
                        d
                    });
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    self.send(&mut adj, *a, || {
                        let mut d = g.clone();
                        Zip::from(&mut d).and(y).for_each(|d, &y| *d *= 1.0 - y * y);
                        d
                    });
                }
                Op::Exp(a) => self.send(&mut adj, *a, || &g * &node.value),
                Op::Log(a) => self.send(&mut adj, *a, || &g / self.value(*a)),
                Op::Square(a) => self.send(&mut adj, *a, || &g * self.value(*a) * 2.0),
                Op::Softplus(a) => {
                    self.send(&mut adj, *a, || {
                        let mut d = g.clone();
                        Zip::from(&mut d)
                            .and(self.value(*a))
                            .for_each(|d, &x| *d *= sigmoid(x));
                        d
                    });
                }
                Op::Clamp(a, lo, hi) => {
                    self.send(&mut adj, *a, || {
                        let mut d = g.clone();
                        Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                            if x < *lo || x > *hi {
                                *d = 0.0
                            }
                        });
                        d
                    });
                }
                Op::Minimum(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    self.send(&mut adj, *a, || {
                        let mut d = g.clone();
                        Zip::from(&mut d).and(va).and(vb).for_each(|d, &x, &y| {
                            if x > y {
                                *d = 0.0
                            }
                        });
                        d
                    });
                    self.send(&mut adj, *b, || {
                        let mut d = g.clone();
                        Zip::from(&mut d).and(va).and(vb).for_each(|d, &x, &y| {
                            if x <= y {
                                *d = 0.0
                            }
                        });
                        d
                    });
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        self.send(&mut adj, p, || g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let h = self.shape(p).0;
                        self.send(&mut adj, p, || g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    self.send(&mut adj, *a, || {
                        let mut d = Array2::zeros(self.shape(*a));
                        d.slice_mut(s![.., *start..*end]).assign(&g);
                        d
                    });
                }
                Op::SliceRows(a, start, end) => {
                    self.send(&mut adj, *a, || {
                        let mut d = Array2::zeros(self.shape(*a));
                        d.slice_mut(s![*start..*end, ..]).assign(&g);
                        d
                    });
                }
                Op::SumCols(a) => {
                    self.send(&mut adj, *a, || {
                        let mut d = Array2::zeros(self.shape(*a));
                        d.assign(&g.broadcast(self.shape(*a)).expect("column broadcast"));
                        d
                    });
                }
                Op::LogSumExpCols(a) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    self.send(&mut adj, *a, || {
                        let mut d = x.clone();
                        for ((mut row, ly), gr) in
                            d.rows_mut().into_iter().zip(y.column(0)).zip(g.column(0))
                        {
                            row.mapv_inplace(|v| (v - ly).exp() * gr);
                        }
                        d
                    });
                }
                Op::PickCols(a, cols) => {
                    self.send(&mut adj, *a, || {
                        let mut d = Array2::zeros(self.shape(*a));
                        for (r, &c) in cols.iter().enumerate() {
                            d[[r, c]] = g[[r, 0]];
                        }
                        d
                    });
                }
                Op::BlocksToCols(a, k) => {
                    self.send(&mut adj, *a, || {
                        let n = g.nrows();
                        Array2::from_shape_fn((n * k, 1), |(i, _)| g[[i % n, i / n]])
                    });
                }
                Op::Sum(a) => {
                    let k = g[[0, 0]];
                    self.send(&mut adj, *a, || Array2::from_elem(self.shape(*a), k));
                }
                Op::Mean(a) => {
                    let shape = self.shape(*a);
                    let k = g[[0, 0]] / (shape.0 * shape.1) as f64;
                    self.send(&mut adj, *a, || Array2::from_elem(shape, k));
                }
            }
        }

        Grads {
            adjoints: adj,
            shapes: self.nodes[..n].iter().map(|n| n.value.dim()).collect(),
        }
    }

    fn send(&self, adj: &mut [Option<Array2<f64>>], to: Var, grad: impl FnOnce() -> Array2<f64>) {
        if self.ng(to) {
            accumulate(adj, to, grad());
        }
    }
}

fn accumulate(adj: &mut [Option<Array2<f64>>], to: Var, grad: Array2<f64>) {
    match &mut adj[to.0] {
        Some(existing) => *existing += &grad,
        slot @ None => *slot = Some(grad),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fd_check(build: impl Fn(&mut Graph, Var) -> Var, x0: Array2<f64>) {
        let mut g = Graph::new();
        let x = g.leaf(x0.clone());
        let y = build(&mut g, x);
        let analytic = g.backward(y).get(x);
        let eps = 1e-6;
        for idx in 0..x0.len() {
            let mut plus = x0.clone();
            let mut minus = x0.clone();
            plus.as_slice_mut().unwrap()[idx] += eps;
            minus.as_slice_mut().unwrap()[idx] -= eps;
            let f = |v: Array2<f64>| {
                let mut g = Graph::new();
                let x = g.constant(v);
                let y = build(&mut g, x);
                g.scalar(y)
            };
            let fd = (f(plus) - f(minus)) / (2.0 * eps);
            let an = analytic.as_slice().unwrap()[idx];
            assert!(
                (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                "element {idx}: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn matmul_and_rows() {
        let w = array![[0.3, -0.2, 0.1], [0.5, 0.4, -0.7]];
        fd_check(
            move |g, x| {
                let w = g.constant(w.clone());
                let b = g.constant(array![[0.1, -0.1, 0.2]]);
                let h = g.matmul(x, w);
                let h = g.add_row(h, b);
                let h = g.tanh(h);
                let s = g.logsumexp_cols(h);
                g.mean(s)
            },
            array![[0.2, -0.3], [1.0, 0.5], [-0.4, 0.9]],
        );
    }

    #[test]
    fn elementwise_chain() {
        fd_check(
            |g, x| {
                let a = g.sigmoid(x);
                let b = g.softplus(x);
                let c = g.mul(a, b);
                let d = g.exp(c);
                let e = g.log(d);
                let f = g.square(e);
                let h = g.clamp(x, -0.5, 0.5);
                let k = g.minimum(f, h);
                let m = g.sum_cols(k);
                let p = g.mul_col(x, m);
                g.sum(p)
            },
            array![[0.2, -0.3, 0.7], [1.3, -0.9, 0.1]],
        );
    }

    #[test]
    fn structural_ops() {
        fd_check(
            |g, x| {
                let a = g.slice_cols(x, 0, 2);
                let b = g.slice_rows(x, 1, 2);
                let c = g.concat_rows(&[a, a]);
                let d = g.concat_cols(&[c, c]);
                let e = g.pick_cols(d, &[0, 3, 1, 2]);
                let bb = g.sum(b);
                let ee = g.mean(e);
                let r = g.relu(x);
                let rr = g.sum(r);
                let t = g.add(bb, ee);
                let t = g.sub(t, rr);
                g.offset(t, 3.0)
            },
            array![[0.2, -0.3, 0.7], [1.3, -0.9, 0.1]],
        );
    }

    #[test]
    fn blocks_to_cols_layout_and_gradient() {
        let mut g = Graph::new();
        let x = g.constant(array![[1.0], [2.0], [3.0], [4.0], [5.0], [6.0]]);
        let y = g.blocks_to_cols(x, 3);
        assert_eq!(g.value(y), &array![[1.0, 3.0, 5.0], [2.0, 4.0, 6.0]]);
        fd_check(
            |g, x| {
                let c = g.slice_cols(x, 0, 1);
                let b = g.blocks_to_cols(c, 2);
                let w = g.constant(array![[0.5, -1.5], [2.0, 0.25]]);
                let m = g.mul(b, w);
                let l = g.logsumexp_cols(m);
                g.sum(l)
            },
            array![[0.2, 9.0], [-0.3, 9.0], [0.7, 9.0], [1.1, 9.0]],
        );
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(array![[1.0, 2.0]]);
        let x = g.leaf(array![[3.0, 4.0]]);
        let y = g.mul(c, x);
        let y = g.sum(y);
        let grads = g.backward(y);
        assert_eq!(grads.get(x), array![[1.0, 2.0]]);
        assert_eq!(grads.get(c), array![[0.0, 0.0]]);
    }

    #[test]
    fn stable_scalar_helpers() {
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
        assert!((sigmoid(-800.0)).abs() < 1e-300);
        let l = logsumexp([1000.0, 1000.0].into_iter());
        assert!((l - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
