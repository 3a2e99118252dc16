//! Reverse-mode differentiation over an explicit operation tape.
//!
//! Every operation appends a node holding its forward value; [`Tape::backward`]
//! walks the nodes in reverse and accumulates adjoints. Parameters enter the
//! tape as copies of [`ParamStore`] entries, so a tape never aliases mutable
//! state and can be replayed from the same inputs.

use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::hetgraph::Csr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    MeanAgg { x: Var, adj: Arc<Csr> },
    Gather { x: Var, rows: Arc<Vec<usize>> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    RowPearsonAbs { a: Var, b: Var, eps: f64 },
    LogSigmoid(Var),
    Sum(Var),
    Mean(Var),
    SoftmaxCe { logits: Var, targets: Arc<Vec<usize>> },
    SigmoidBce { logits: Var, targets: Arc<Tensor> },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(z))` without overflow.
pub(crate) fn log_sigmoid(z: f64) -> f64 {
    z.min(0.0) - (-z.abs()).exp().ln_1p()
}

/// `log(1 + exp(z))` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn mean_aggregate_kernel(x: &Tensor, adj: &Csr) -> Tensor {
    let mut out = Array2::zeros((adj.n_rows(), x.ncols()));
    for (u, mut row) in out.outer_iter_mut().enumerate() {
        let nbrs = adj.row(u);
        if nbrs.is_empty() {
            continue;
        }
        for &v in nbrs {
            row += &x.row(v);
        }
        row /= nbrs.len() as f64;
    }
    out
}

/// Centered rows, their variances (population) and the covariance.
fn pearson_stats(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>, f64, f64, f64) {
    let d = a.len() as f64;
    let ma = a.iter().sum::<f64>() / d;
    let mb = b.iter().sum::<f64>() / d;
    let ca: Vec<f64> = a.iter().map(|x| x - ma).collect();
    let cb: Vec<f64> = b.iter().map(|x| x - mb).collect();
    let va = ca.iter().map(|x| x * x).sum::<f64>() / d;
    let vb = cb.iter().map(|x| x * x).sum::<f64>() / d;
    let cov = ca.iter().zip(&cb).map(|(x, y)| x * y).sum::<f64>() / d;
    (ca, cb, va, vb, cov)
}

pub(crate) fn pearson_abs_kernel(a: &[f64], b: &[f64], eps: f64) -> f64 {
    let (_, _, va, vb, cov) = pearson_stats(a, b);
    cov.abs() / ((va + eps).sqrt() * (vb + eps).sqrt())
}

/// Gradient of `|r|` with respect to `a` and `b`, scaled by `g`.
fn pearson_abs_backward(a: &[f64], b: &[f64], eps: f64, g: f64, ga: &mut [f64], gb: &mut [f64]) {
    let d = a.len() as f64;
    let (ca, cb, va, vb, cov) = pearson_stats(a, b);
    let (sa, sb) = ((va + eps).sqrt(), (vb + eps).sqrt());
    let sign = if cov > 0.0 {
        1.0
    } else if cov < 0.0 {
        -1.0
    } else {
        0.0
    };
    let k = g * sign / (d * sa * sb);
    for i in 0..a.len() {
        // centering terms vanish because the centered vectors sum to zero
        ga[i] += k * (cb[i] - cov * ca[i] / (sa * sa));
        gb[i] += k * (ca[i] - cov * cb[i] / (sb * sb));
    }
}

pub(crate) fn softmax_ce_kernel(logits: &Tensor, targets: &[usize]) -> (f64, Tensor) {
    let n = logits.nrows();
    let mut probs = logits.clone();
    let mut loss = 0.0;
    for (i, mut row) in probs.outer_iter_mut().enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|z| (z - max).exp());
        let sum = row.sum();
        loss += sum.ln() + max - logits[[i, targets[i]]];
        row /= sum;
    }
    (loss / n as f64, probs)
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        debug_assert_eq!(t.dim(), (1, 1));
        t[[0, 0]]
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add: shape mismatch");
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    /// Sum of several same-shape nodes.
    pub fn add_all(&mut self, vars: &[Var]) -> Var {
        let mut acc = vars[0];
        for &v in &vars[1..] {
            acc = self.add(acc, v);
        }
        acc
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "mul: shape mismatch");
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        self.push(value, Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    /// Row `u` of the result is the mean of `x` over `adj.row(u)`, zero when empty.
    pub fn mean_aggregate(&mut self, x: Var, adj: Arc<Csr>) -> Var {
        assert_eq!(
            adj.n_cols(),
            self.value(x).nrows(),
            "mean_aggregate: column count mismatch"
        );
        let value = mean_aggregate_kernel(self.value(x), &adj);
        self.push(value, Op::MeanAgg { x, adj })
    }

    pub fn gather_rows(&mut self, x: Var, rows: Arc<Vec<usize>>) -> Var {
        let value = self.value(x).select(Axis(0), &rows);
        self.push(value, Op::Gather { x, rows })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    /// `n x 1` column of per-row `|pearson(a_i, b_i)|`, variance-guarded by `eps`.
    pub fn row_pearson_abs(&mut self, a: Var, b: Var, eps: f64) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.dim(), vb.dim(), "row_pearson_abs: shape mismatch");
        let mut value = Array2::zeros((va.nrows(), 1));
        for i in 0..va.nrows() {
            let (ra, rb) = (va.row(i).to_vec(), vb.row(i).to_vec());
            value[[i, 0]] = pearson_abs_kernel(&ra, &rb, eps);
        }
        self.push(value, Op::RowPearsonAbs { a, b, eps })
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(log_sigmoid);
        self.push(value, Op::LogSigmoid(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Array2::from_elem((1, 1), t.sum() / t.len() as f64);
        self.push(value, Op::Mean(a))
    }

    /// Mean softmax cross-entropy of `logits` rows against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Arc<Vec<usize>>) -> Var {
        let z = self.value(logits);
        assert_eq!(z.nrows(), targets.len(), "softmax_cross_entropy: row/target mismatch");
        assert!(
            targets.iter().all(|&t| t < z.ncols()),
            "softmax_cross_entropy: class out of range"
        );
        let (loss, _) = softmax_ce_kernel(z, &targets);
        self.push(Array2::from_elem((1, 1), loss), Op::SoftmaxCe { logits, targets })
    }

    /// Mean element-wise sigmoid binary cross-entropy against 0/1 targets.
    pub fn sigmoid_bce(&mut self, logits: Var, targets: Arc<Tensor>) -> Var {
        let z = self.value(logits);
        assert_eq!(z.dim(), targets.dim(), "sigmoid_bce: shape mismatch");
        let total: f64 = Zip::from(z)
            .and(&*targets)
            .fold(0.0, |acc, &z, &y| acc + softplus(z) - y * z);
        let loss = total / z.len() as f64;
        self.push(Array2::from_elem((1, 1), loss), Op::SigmoidBce { logits, targets })
    }

    /// Adjoints of every node with respect to the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward: loss must be 1 x 1");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, k) => acc(&mut grads, *a, &g * *k),
                Op::Relu(a) => {
                    let mut ga = g.clone();
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|gv, &x| {
                        if x <= 0.0 {
                            *gv = 0.0;
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::MeanAgg { x, adj } => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    for u in 0..adj.n_rows() {
                        let nbrs = adj.row(u);
                        if nbrs.is_empty() {
                            continue;
                        }
                        let share = &g.row(u) / nbrs.len() as f64;
                        for &v in nbrs {
                            let mut r = gx.row_mut(v);
                            r += &share;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Gather { x, rows } => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    for (k, &r) in rows.iter().enumerate() {
                        let mut dst = gx.row_mut(r);
                        dst += &g.row(k);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let n = self.value(p).nrows();
                        acc(&mut grads, p, g.slice(s![start..start + n, ..]).to_owned());
                        start += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let n = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., start..start + n]).to_owned());
                        start += n;
                    }
                }
                Op::RowPearsonAbs { a, b, eps } => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut ga = Array2::zeros(va.dim());
                    let mut gb = Array2::zeros(vb.dim());
                    let d = va.ncols();
                    let mut bufa = vec![0.0; d];
                    let mut bufb = vec![0.0; d];
                    for r in 0..va.nrows() {
                        bufa.iter_mut().for_each(|x| *x = 0.0);
                        bufb.iter_mut().for_each(|x| *x = 0.0);
                        let (ra, rb) = (va.row(r).to_vec(), vb.row(r).to_vec());
                        pearson_abs_backward(&ra, &rb, *eps, g[[r, 0]], &mut bufa, &mut bufb);
                        for j in 0..d {
                            ga[[r, j]] = bufa[j];
                            gb[[r, j]] = bufb[j];
                        }
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::LogSigmoid(a) => {
                    let mut ga = g.clone();
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|gv, &z| *gv *= sigmoid(-z));
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.value(*a).dim(), g[[0, 0]]);
                    acc(&mut grads, *a, ga);
                }
                Op::Mean(a) => {
                    let t = self.value(*a);
                    let ga = Array2::from_elem(t.dim(), g[[0, 0]] / t.len() as f64);
                    acc(&mut grads, *a, ga);
                }
                Op::SoftmaxCe { logits, targets } => {
                    let z = self.value(*logits);
                    let (_, mut probs) = softmax_ce_kernel(z, targets);
                    for (i, &t) in targets.iter().enumerate() {
                        probs[[i, t]] -= 1.0;
                    }
                    probs *= g[[0, 0]] / z.nrows() as f64;
                    acc(&mut grads, *logits, probs);
                }
                Op::SigmoidBce { logits, targets } => {
                    let z = self.value(*logits);
                    let k = g[[0, 0]] / z.len() as f64;
                    let mut gz = Array2::zeros(z.dim());
                    Zip::from(&mut gz)
                        .and(z)
                        .and(&**targets)
                        .for_each(|gv, &z, &y| *gv = k * (sigmoid(z) - y));
                    acc(&mut grads, *logits, gz);
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    /// Adds parameter adjoints into the store's gradient accumulators.
    pub fn accumulate_param_grads(&self, grads: &Gradients, store: &mut ParamStore) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, grads.grads[i].as_ref()) {
                store.add_grad(*id, g);
            }
        }
    }
}
