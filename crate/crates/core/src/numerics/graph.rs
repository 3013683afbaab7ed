//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every op applied during a forward pass. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and
//! accumulates gradients into every node that requires them. Ops are only the
//! ones the attentive classifier, the relevance MLP and the sandbox need.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{dot, matmul_at_into, matmul_bt_into, matmul_into, Tensor};
use crate::error::{contract, Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddN(Vec<Var>),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Gelu(Var),
    Attention { qkv: Var, heads: usize, probs: Vec<f64> },
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    GatherRows { x: Var, index: Vec<usize> },
    RowDot(Var, Var),
    Softmax(Var),
    Sigmoid(Var),
    Mean(Var),
    CrossEntropy { logits: Var, label: usize, probs: Vec<f64> },
    WeightedBce { logits: Var, targets: Vec<f64>, weights: Vec<f64> },
    WeightedSoftmaxCe { logits: Var, label: usize, q: Vec<f64> },
    L1 { a: Var, b: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn inv_sqrt(x: f64) -> f64 {
    1.0 / libm::sqrt(x)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + libm::log1p(libm::exp(-z.abs()))
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2));
    let pdf = libm::exp(-0.5 * x * x) * 0.398_942_280_401_432_7;
    cdf + x * pdf
}

/// Numerically stable in-place softmax of one row.
pub(crate) fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Adds an input or parameter to the tape.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// `x[..×M] · w[M×K]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        contract!(wv.shape().len() == 2, "matmul weight must be 2-D, got {:?}", wv.shape());
        let (m, k) = (wv.shape()[0], wv.shape()[1]);
        contract!(xv.cols() == m, "matmul shapes {:?} x {:?} do not conform", xv.shape(), wv.shape());
        let rows = xv.rows();
        let mut out = vec![0.0; rows * k];
        matmul_into(xv.data(), wv.data(), &mut out, rows, m, k);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = k;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(Tensor::new(&shape, out)?, Op::MatMul(x, w), rg))
    }

    /// Adds a bias vector to every row.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        contract!(bv.len() == xv.cols(), "bias of length {} for rows of {}", bv.len(), xv.cols());
        let k = xv.cols();
        let mut out = xv.data().to_vec();
        for (i, o) in out.iter_mut().enumerate() {
            *o += bv.data()[i % k];
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(Tensor::new(&shape, out)?, Op::AddBias(x, b), rg))
    }

    /// `x·W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (av, bv) = (self.value(a), self.value(b));
        contract!(av.shape() == bv.shape(), "{} shapes {:?} and {:?} differ", what, av.shape(), bv.shape());
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (av, bv) = (self.value(a), self.value(b));
        let out = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let shape = av.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let (av, bv) = (self.value(a), self.value(b));
        let out = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        let shape = av.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (av, bv) = (self.value(a), self.value(b));
        let out = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let shape = av.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let xv = self.value(x);
        let out: Vec<f64> = xv.data().iter().map(|v| v * factor).collect();
        let shape = xv.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(&shape, out).expect("same shape"), Op::Scale(x, factor), rg)
    }

    /// Elementwise sum of same-shaped nodes.
    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        contract!(!xs.is_empty(), "add_n of nothing");
        for &x in &xs[1..] {
            self.same_shape(xs[0], x, "add_n")?;
        }
        let mut out = self.value(xs[0]).data().to_vec();
        for &x in &xs[1..] {
            for (o, v) in out.iter_mut().zip(self.value(x).data()) {
                *o += v;
            }
        }
        let shape = self.value(xs[0]).shape().to_vec();
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(Tensor::new(&shape, out)?, Op::AddN(xs.to_vec()), rg))
    }

    /// Normalizes each row over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let m = xv.cols();
        contract!(self.value(gamma).len() == m, "layer_norm gamma length {} != {}", self.value(gamma).len(), m);
        contract!(self.value(beta).len() == m, "layer_norm beta length {} != {}", self.value(beta).len(), m);
        let rows = xv.rows();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; rows * m];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * m];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let rs = inv_sqrt(var + eps);
            rstd[r] = rs;
            for c in 0..m {
                let h = (row[c] - mean) * rs;
                xhat[r * m + c] = h;
                out[r * m + c] = h * g[c] + b[c];
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(Tensor::new(&shape, out)?, Op::LayerNorm { x, gamma, beta, xhat, rstd }, rg))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = xv.data().iter().map(|&v| gelu(v)).collect();
        let shape = xv.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(&shape, out).expect("same shape"), Op::Gelu(x), rg)
    }

    /// Multi-head softmax attention over all rows of a packed `[T×3D]` q/k/v
    /// projection. Returns the concatenated head outputs `[T×D]`.
    pub fn attention(&mut self, qkv: Var, heads: usize) -> Result<Var> {
        let v = self.value(qkv);
        contract!(v.shape().len() == 2, "attention input must be 2-D");
        let t = v.rows();
        let three_d = v.cols();
        contract!(three_d % 3 == 0, "packed qkv width {} not divisible by 3", three_d);
        let d = three_d / 3;
        contract!(heads > 0 && d % heads == 0, "width {} not divisible by {} heads", d, heads);
        let dh = d / heads;
        let scale = inv_sqrt(dh as f64);
        let data = v.data();
        let mut probs = vec![0.0; heads * t * t];
        let mut out = vec![0.0; t * d];
        for h in 0..heads {
            let p = &mut probs[h * t * t..(h + 1) * t * t];
            for i in 0..t {
                let q = &data[i * three_d + h * dh..i * three_d + (h + 1) * dh];
                let prow = &mut p[i * t..(i + 1) * t];
                for (j, pj) in prow.iter_mut().enumerate() {
                    let k = &data[j * three_d + d + h * dh..j * three_d + d + (h + 1) * dh];
                    *pj = dot(q, k) * scale;
                }
                softmax_row(prow);
                let orow = &mut out[i * d + h * dh..i * d + (h + 1) * dh];
                for (j, &pj) in prow.iter().enumerate() {
                    let vv = &data[j * three_d + 2 * d + h * dh..j * three_d + 2 * d + (h + 1) * dh];
                    for (o, x) in orow.iter_mut().zip(vv) {
                        *o += pj * x;
                    }
                }
            }
        }
        let rg = self.rg(qkv);
        Ok(self.push(Tensor::new(&[t, d], out)?, Op::Attention { qkv, heads, probs }, rg))
    }

    /// Stacks 2-D nodes along the row axis.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        contract!(!xs.is_empty(), "concat of nothing");
        let cols = self.value(xs[0]).cols();
        let mut out = Vec::new();
        for &x in xs {
            let v = self.value(x);
            contract!(v.cols() == cols, "concat width {} != {}", v.cols(), cols);
            out.extend_from_slice(v.data());
        }
        let rows = out.len() / cols;
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(Tensor::new(&[rows, cols], out)?, Op::ConcatRows(xs.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        contract!(len > 0 && start + len <= v.rows(), "row slice {}..{} of {}", start, start + len, v.rows());
        let c = v.cols();
        let out = v.data()[start * c..(start + len) * c].to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[len, c], out)?, Op::SliceRows { x, start }, rg))
    }

    /// Selects rows by index; repeated indices are allowed.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let v = self.value(x);
        contract!(!index.is_empty(), "gather of no rows");
        let rows = v.rows();
        contract!(index.iter().all(|&i| i < rows), "gather index out of range for {} rows", rows);
        let c = v.cols();
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            out.extend_from_slice(v.row(i));
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[index.len(), c], out)?, Op::GatherRows { x, index: index.to_vec() }, rg))
    }

    /// Row-wise dot products of two `[R×K]` nodes, giving `[R]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "row_dot")?;
        let (av, bv) = (self.value(a), self.value(b));
        let out: Vec<f64> = (0..av.rows()).map(|r| dot(av.row(r), bv.row(r))).collect();
        let rg = self.rg(a) || self.rg(b);
        let n = out.len();
        Ok(self.push(Tensor::new(&[n], out)?, Op::RowDot(a, b), rg))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let c = v.cols();
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(c) {
            softmax_row(row);
        }
        let shape = v.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(&shape, out).expect("same shape"), Op::Softmax(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = v.data().iter().map(|&z| sigmoid(z)).collect();
        let shape = v.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(&shape, out).expect("same shape"), Op::Sigmoid(x), rg)
    }

    /// Mean of all elements, as a scalar node.
    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    /// Softmax cross-entropy of a logit vector against a class index.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let v = self.value(logits);
        let c = v.len();
        contract!(label < c, "label {} out of range for {} classes", label, c);
        let mut probs = v.data().to_vec();
        softmax_row(&mut probs);
        let max = v.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + libm::log(v.data().iter().map(|z| libm::exp(z - max)).sum::<f64>());
        let loss = lse - v.data()[label];
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, label, probs }, rg))
    }

    /// Mean over classes of `weight_j · BCE(sigmoid(z_j), y_j)`.
    pub fn weighted_bce(&mut self, logits: Var, targets: &[f64], weights: &[f64]) -> Result<Var> {
        let v = self.value(logits);
        let c = v.len();
        contract!(targets.len() == c, "{} targets for {} logits", targets.len(), c);
        contract!(weights.len() == c, "{} weights for {} logits", weights.len(), c);
        let loss = v
            .data()
            .iter()
            .zip(targets.iter().zip(weights))
            .map(|(&z, (&y, &w))| w * (softplus(z) - y * z))
            .sum::<f64>()
            / c as f64;
        let rg = self.rg(logits);
        let op = Op::WeightedBce { logits, targets: targets.to_vec(), weights: weights.to_vec() };
        Ok(self.push(Tensor::scalar(loss), op, rg))
    }

    /// `−z_y + log Σ_k w_k exp(z_k)`; with all weights 1 this is cross-entropy.
    pub fn weighted_softmax_ce(&mut self, logits: Var, label: usize, weights: &[f64]) -> Result<Var> {
        let v = self.value(logits);
        let c = v.len();
        contract!(label < c, "label {} out of range for {} classes", label, c);
        contract!(weights.len() == c, "{} weights for {} logits", weights.len(), c);
        contract!(weights[label] > 0.0, "ground-truth class weight must be positive");
        let z = v.data();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut q: Vec<f64> = z.iter().zip(weights).map(|(&zk, &w)| w * libm::exp(zk - max)).collect();
        let s: f64 = q.iter().sum();
        for x in q.iter_mut() {
            *x /= s;
        }
        let loss = max + libm::log(s) - z[label];
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), Op::WeightedSoftmaxCe { logits, label, q }, rg))
    }

    /// Mean absolute difference.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "l1")?;
        let (av, bv) = (self.value(a), self.value(b));
        let m = av.data().iter().zip(bv.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / av.len() as f64;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(m), Op::L1 { a, b }, rg))
    }

    /// Back-propagates from a scalar node. Gradients accumulate, so call
    /// once per graph.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        contract!(self.value(root).len() == 1, "backward needs a scalar root");
        if !self.rg(root) {
            return Ok(());
        }
        self.nodes[root.0].grad = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else { continue };
            let contributions = self.local_grads(i, &g);
            self.nodes[i].grad = Some(g);
            for (v, dv) in contributions {
                self.accumulate(v, dv);
            }
        }
        let bad = self.nodes.iter().any(|n| n.grad.as_ref().is_some_and(|g| g.iter().any(|x| !x.is_finite())));
        if bad {
            return Err(Error::NumericFault(format!("non-finite gradient from root {:?}", root)));
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, dv: Vec<f64>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(dv) {
                    *a += b;
                }
            }
            None => node.grad = Some(dv),
        }
    }

    fn local_grads(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(x, w) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (m, k) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.rows();
                if self.rg(*x) {
                    let mut dx = vec![0.0; rows * m];
                    matmul_bt_into(g, wv.data(), &mut dx, rows, k, m);
                    out.push((*x, dx));
                }
                if self.rg(*w) {
                    let mut dw = vec![0.0; m * k];
                    matmul_at_into(xv.data(), g, &mut dw, rows, m, k);
                    out.push((*w, dw));
                }
            }
            Op::AddBias(x, b) => {
                if self.rg(*x) {
                    out.push((*x, g.to_vec()));
                }
                if self.rg(*b) {
                    let k = self.value(*b).len();
                    let mut db = vec![0.0; k];
                    for (j, gv) in g.iter().enumerate() {
                        db[j % k] += gv;
                    }
                    out.push((*b, db));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.iter().map(|v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                out.push((*a, g.iter().zip(bv).map(|(x, y)| x * y).collect()));
                out.push((*b, g.iter().zip(av).map(|(x, y)| x * y).collect()));
            }
            Op::Scale(x, f) => out.push((*x, g.iter().map(|v| v * f).collect())),
            Op::AddN(xs) => {
                for &x in xs {
                    out.push((x, g.to_vec()));
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let m = self.value(*gamma).len();
                let gam = self.value(*gamma).data();
                let rows = rstd.len();
                if self.rg(*gamma) {
                    let mut dg = vec![0.0; m];
                    for (j, (gv, h)) in g.iter().zip(xhat).enumerate() {
                        dg[j % m] += gv * h;
                    }
                    out.push((*gamma, dg));
                }
                if self.rg(*beta) {
                    let mut db = vec![0.0; m];
                    for (j, gv) in g.iter().enumerate() {
                        db[j % m] += gv;
                    }
                    out.push((*beta, db));
                }
                if self.rg(*x) {
                    let mut dx = vec![0.0; rows * m];
                    for r in 0..rows {
                        let gr = &g[r * m..(r + 1) * m];
                        let hr = &xhat[r * m..(r + 1) * m];
                        let mut sum_g = 0.0;
                        let mut sum_gh = 0.0;
                        for c in 0..m {
                            let gg = gr[c] * gam[c];
                            sum_g += gg;
                            sum_gh += gg * hr[c];
                        }
                        let inv_m = 1.0 / m as f64;
                        for c in 0..m {
                            let gg = gr[c] * gam[c];
                            dx[r * m + c] = rstd[r] * (gg - inv_m * sum_g - hr[c] * inv_m * sum_gh);
                        }
                    }
                    out.push((*x, dx));
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                out.push((*x, g.iter().zip(xv).map(|(gv, &v)| gv * gelu_grad(v)).collect()));
            }
            Op::Attention { qkv, heads, probs } => {
                let v = self.value(*qkv);
                let t = v.rows();
                let three_d = v.cols();
                let d = three_d / 3;
                let dh = d / heads;
                let scale = inv_sqrt(dh as f64);
                let data = v.data();
                let mut dqkv = vec![0.0; t * three_d];
                let mut dp = vec![0.0; t];
                for h in 0..*heads {
                    let p = &probs[h * t * t..(h + 1) * t * t];
                    for i in 0..t {
                        let go = &g[i * d + h * dh..i * d + (h + 1) * dh];
                        let prow = &p[i * t..(i + 1) * t];
                        // dV_j += p_ij · dO_i ; dP_ij = dO_i · V_j
                        for j in 0..t {
                            let vo = j * three_d + 2 * d + h * dh;
                            dp[j] = dot(go, &data[vo..vo + dh]);
                            for c in 0..dh {
                                dqkv[vo + c] += prow[j] * go[c];
                            }
                        }
                        let s: f64 = prow.iter().zip(&dp).map(|(a, b)| a * b).sum();
                        let qo = i * three_d + h * dh;
                        for j in 0..t {
                            let ds = prow[j] * (dp[j] - s) * scale;
                            if ds == 0.0 {
                                continue;
                            }
                            let ko = j * three_d + d + h * dh;
                            for c in 0..dh {
                                dqkv[qo + c] += ds * data[ko + c];
                                dqkv[ko + c] += ds * data[qo + c];
                            }
                        }
                    }
                }
                out.push((*qkv, dqkv));
            }
            Op::ConcatRows(xs) => {
                let mut off = 0;
                for &x in xs {
                    let n = self.value(x).len();
                    out.push((x, g[off..off + n].to_vec()));
                    off += n;
                }
            }
            Op::SliceRows { x, start } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut dx = vec![0.0; xv.len()];
                dx[start * c..start * c + g.len()].copy_from_slice(g);
                out.push((*x, dx));
            }
            Op::GatherRows { x, index } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut dx = vec![0.0; xv.len()];
                for (k, &r) in index.iter().enumerate() {
                    for j in 0..c {
                        dx[r * c + j] += g[k * c + j];
                    }
                }
                out.push((*x, dx));
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let c = av.cols();
                let da = (0..av.len()).map(|j| g[j / c] * bv.data()[j]).collect();
                let db = (0..bv.len()).map(|j| g[j / c] * av.data()[j]).collect();
                out.push((*a, da));
                out.push((*b, db));
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let c = node.value.cols();
                let mut dx = vec![0.0; y.len()];
                for r in 0..y.len() / c {
                    let yr = &y[r * c..(r + 1) * c];
                    let gr = &g[r * c..(r + 1) * c];
                    let s = dot(yr, gr);
                    for k in 0..c {
                        dx[r * c + k] = yr[k] * (gr[k] - s);
                    }
                }
                out.push((*x, dx));
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                out.push((*x, g.iter().zip(y).map(|(gv, s)| gv * s * (1.0 - s)).collect()));
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                out.push((*x, vec![g[0] / n as f64; n]));
            }
            Op::CrossEntropy { logits, label, probs } => {
                let mut d: Vec<f64> = probs.iter().map(|p| p * g[0]).collect();
                d[*label] -= g[0];
                out.push((*logits, d));
            }
            Op::WeightedBce { logits, targets, weights } => {
                let z = self.value(*logits).data();
                let c = z.len() as f64;
                let d = z
                    .iter()
                    .zip(targets.iter().zip(weights))
                    .map(|(&zj, (&y, &w))| g[0] * w * (sigmoid(zj) - y) / c)
                    .collect();
                out.push((*logits, d));
            }
            Op::WeightedSoftmaxCe { logits, label, q } => {
                let mut d: Vec<f64> = q.iter().map(|p| p * g[0]).collect();
                d[*label] -= g[0];
                out.push((*logits, d));
            }
            Op::L1 { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let n = av.len() as f64;
                let da: Vec<f64> = av
                    .iter()
                    .zip(bv)
                    .map(|(x, y)| {
                        let s = if x > y { 1.0 } else if x < y { -1.0 } else { 0.0 };
                        g[0] * s / n
                    })
                    .collect();
                let db = da.iter().map(|v| -v).collect();
                out.push((*a, da));
                out.push((*b, db));
            }
        }
        out
    }
}
