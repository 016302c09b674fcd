//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every operation appends a node holding its output value and the handles
//! of its inputs, so the node list is always in topological order. The
//! backward pass walks it in reverse.

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
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
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
    MeanRows(Var),
    ConcatCols(Vec<Var>),
    Mean(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation. Leaf gradients accumulate across `backward` calls
/// until [`Tape::zero_grads`] is called.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        debug_assert!(value.data().iter().all(|x| !x.is_nan()));
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a leaf. It receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad();
        let mut t = t;
        t.clear_grad();
        self.push(t, Op::Leaf, needs)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let mut t = t.with_requires_grad(false);
        t.clear_grad();
        self.push(t, Op::Leaf, false)
    }

    /// Records a trainable leaf (copy of `t`, gradient tracked).
    pub fn param(&mut self, t: &Tensor) -> Var {
        let mut c = Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("valid tensor");
        c = c.with_requires_grad(true);
        self.push(c, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads[v.0].as_deref()
    }

    pub fn zero_grads(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    fn mat(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(op, s, &[])),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat(a, "matmul")?;
        let (k2, n) = self.mat(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), needs))
    }

    /// `a·bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat(a, "matmul_nt")?;
        let (n, k2) = self.mat(b, "matmul_nt")?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_nt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNt(a, b), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), needs))
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.mat(x, "add_row_bias")?;
        if self.value(bias).len() != n {
            return Err(Error::shape("add_row_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for r in 0..m {
            for (v, bj) in data[r * n..(r + 1) * n].iter_mut().zip(b) {
                *v += bj;
            }
        }
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::AddRowBias(x, bias), needs))
    }

    /// `x·w + b`, bias broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row_bias(xw, b)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let data = self.value(x).data().iter().map(|v| v * factor).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(t, Op::Scale(x, factor), needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(t, Op::Relu(x), needs)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Validation(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let y = kernels::softmax_axis(self.value(x).data(), &shape, axis);
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(shape, y)?, Op::Softmax { x, axis }, needs))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (rows, d) = self.mat(x, "layer_norm")?;
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gamma)));
        }
        if eps <= 0.0 {
            return Err(Error::Validation("layer_norm eps must be positive".into()));
        }
        let (y, xhat, rstd) = kernels::layer_norm_rows(
            self.value(x).data(),
            rows,
            d,
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        };
        Ok(self.push(Tensor::new(vec![rows, d], y)?, op, needs))
    }

    /// Mean negative log-likelihood of `labels` (0-based) under row-wise
    /// softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = self.mat(logits, "cross_entropy")?;
        if labels.len() != n {
            return Err(Error::shape("cross_entropy", self.shape(logits), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Validation(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let x = self.value(logits).data();
        let mut probs = vec![0.0; n * k];
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &x[r * k..(r + 1) * k];
            let lse = kernels::log_sum_exp(row);
            total += lse - row[label];
            for j in 0..k {
                probs[r * k + j] = (row[j] - lse).exp();
            }
        }
        let needs = self.needs(logits);
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.push(Tensor::scalar(total / n as f64), op, needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    /// Column means of an `m×n` matrix, as a `1×n` matrix.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.mat(x, "mean_rows")?;
        let src = self.value(x).data();
        let mut out = vec![0.0; n];
        for r in 0..m {
            for (o, v) in out.iter_mut().zip(&src[r * n..(r + 1) * n]) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(vec![1, n], out)?, Op::MeanRows(x), needs))
    }

    /// Horizontal concatenation of matrices sharing a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Validation("concat_cols needs at least one input".into()))?;
        let (m, _) = self.mat(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.mat(p, "concat_cols")?;
            if r != m {
                return Err(Error::shape("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; m * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..m {
                out[r * total + off..r * total + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(vec![m, total], out)?, Op::ConcatCols(parts.to_vec()), needs))
    }

    /// Elementwise arithmetic mean of same-shaped tensors.
    pub fn mean_of(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Validation("mean_of needs at least one input".into()))?;
        let shape = self.shape(first).to_vec();
        let mut out = vec![0.0; self.value(first).len()];
        for &p in parts {
            if self.shape(p) != shape.as_slice() {
                return Err(Error::shape("mean_of", &shape, self.shape(p)));
            }
            for (o, v) in out.iter_mut().zip(self.value(p).data()) {
                *o += v;
            }
        }
        let inv = 1.0 / parts.len() as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(shape, out)?, Op::Mean(parts.to_vec()), needs))
    }

    /// Returns `(output, weights)` with `weights = softmax(q·kᵀ/√dk)` row-wise
    /// and `output = weights·v`.
    pub fn scaled_dot_attention(&mut self, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
        let (_, dk) = self.mat(q, "scaled_dot_attention")?;
        let (nk, dk2) = self.mat(k, "scaled_dot_attention")?;
        let (nv, _) = self.mat(v, "scaled_dot_attention")?;
        if dk != dk2 {
            return Err(Error::shape("scaled_dot_attention", self.shape(q), self.shape(k)));
        }
        if nk != nv {
            return Err(Error::shape("scaled_dot_attention", self.shape(k), self.shape(v)));
        }
        let logits = self.matmul_nt(q, k)?;
        let scaled = self.scale(logits, 1.0 / (dk as f64).sqrt());
        let weights = self.softmax(scaled, 1)?;
        let out = self.matmul(weights, v)?;
        Ok((out, weights))
    }

    /// Reverse pass from a scalar `loss`. Leaf gradients are added to what
    /// earlier calls accumulated.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            if matches!(self.nodes[idx].op, Op::Leaf) {
                match &mut self.leaf_grads[idx] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, x)| *a += x),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let nodes = &self.nodes;
        macro_rules! slot {
            ($v:expr) => {
                grad_slot(nodes, grads, $v)
            };
        }

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims(&nodes[a.0].value);
                let n = nodes[b.0].value.shape()[1];
                if let Some(ga) = slot!(*a) {
                    // dA = dC·Bᵀ
                    kernels::matmul_nt_acc(g, nodes[b.0].value.data(), ga, m, n, k);
                }
                if let Some(gb) = slot!(*b) {
                    // dB = Aᵀ·dC
                    kernels::matmul_tn_acc(nodes[a.0].value.data(), g, gb, m, k, n);
                }
            }
            Op::MatMulNt(a, b) => {
                // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
                let (m, k) = dims(&nodes[a.0].value);
                let n = nodes[b.0].value.shape()[0];
                if let Some(ga) = slot!(*a) {
                    kernels::matmul_acc(g, nodes[b.0].value.data(), ga, m, n, k);
                }
                if let Some(gb) = slot!(*b) {
                    kernels::matmul_tn_acc(g, nodes[a.0].value.data(), gb, m, n, k);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = slot!(*v) {
                        gv.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::AddRowBias(x, b) => {
                if let Some(gx) = slot!(*x) {
                    gx.iter_mut().zip(g).for_each(|(a, y)| *a += y);
                }
                let n = nodes[b.0].value.len();
                if let Some(gb) = slot!(*b) {
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(a, y)| *a += y);
                    }
                }
            }
            Op::Scale(x, f) => {
                if let Some(gx) = slot!(*x) {
                    gx.iter_mut().zip(g).for_each(|(a, y)| *a += f * y);
                }
            }
            Op::Relu(x) => {
                let xv = nodes[x.0].value.data();
                if let Some(gx) = slot!(*x) {
                    for ((a, y), &xi) in gx.iter_mut().zip(g).zip(xv) {
                        if xi > 0.0 {
                            *a += y;
                        }
                    }
                }
            }
            Op::Softmax { x, axis } => {
                if let Some(gx) = slot!(*x) {
                    kernels::softmax_axis_backward(
                        node.value.data(),
                        g,
                        node.value.shape(),
                        *axis,
                        gx,
                    );
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (rows, d) = dims(&node.value);
                let gam = nodes[gamma.0].value.data();
                if let Some(gg) = slot!(*gamma) {
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if let Some(gb) = slot!(*beta) {
                    for r in 0..rows {
                        for j in 0..d {
                            gb[j] += g[r * d + j];
                        }
                    }
                }
                if let Some(gx) = slot!(*x) {
                    for r in 0..rows {
                        let gh: Vec<f64> = (0..d).map(|j| g[r * d + j] * gam[j]).collect();
                        let h = &xhat[r * d..(r + 1) * d];
                        let sum_gh: f64 = gh.iter().sum();
                        let sum_ghh: f64 = gh.iter().zip(h).map(|(a, b)| a * b).sum();
                        let c = rstd[r] / d as f64;
                        for j in 0..d {
                            gx[r * d + j] += c * (d as f64 * gh[j] - sum_gh - h[j] * sum_ghh);
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let (n, k) = dims(&nodes[logits.0].value);
                if let Some(gl) = slot!(*logits) {
                    let s = g[0] / n as f64;
                    for (r, &label) in labels.iter().enumerate() {
                        for j in 0..k {
                            let onehot = if j == label { 1.0 } else { 0.0 };
                            gl[r * k + j] += s * (probs[r * k + j] - onehot);
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = slot!(*x) {
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::MeanRows(x) => {
                let (m, n) = dims(&nodes[x.0].value);
                if let Some(gx) = slot!(*x) {
                    let inv = 1.0 / m as f64;
                    for r in 0..m {
                        for j in 0..n {
                            gx[r * n + j] += g[j] * inv;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.shape()[1];
                let m = node.value.shape()[0];
                let mut off = 0;
                for p in parts {
                    let w = nodes[p.0].value.shape()[1];
                    if let Some(gp) = slot!(*p) {
                        for r in 0..m {
                            for j in 0..w {
                                gp[r * w + j] += g[r * total + off + j];
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::Mean(parts) => {
                let inv = 1.0 / parts.len() as f64;
                for p in parts {
                    if let Some(gp) = slot!(*p) {
                        gp.iter_mut().zip(g).for_each(|(a, y)| *a += inv * y);
                    }
                }
            }
        }
    }
}

/// Gradient buffer of `v`, allocated on demand; `None` when `v` takes no
/// part in the backward pass.
fn grad_slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    let n = &nodes[v.0];
    if !n.needs_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]))
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.shape()[0], t.shape()[1])
}

/// Free-function form of [`Tape::backward`].
pub fn backward(loss: Var, tape: &mut Tape) -> Result<()> {
    tape.backward(loss)
}
