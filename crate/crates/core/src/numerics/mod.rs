//! Dense `f64` tensors, tape-based reverse-mode differentiation, and Adam.
//!
//! The free functions here are eager conveniences that run a single op on a
//! scratch tape; model code records directly on a [`Tape`].

mod adam;
pub(crate) mod kernels;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use kernels::pairwise_sum;
pub use tape::{backward, Tape, Var};
pub use tensor::Tensor;

use crate::error::Result;

fn eager<F>(inputs: &[&Tensor], f: F) -> Result<Tensor>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant((*t).clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).clone())
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    eager(&[a, b], |t, v| t.matmul(v[0], v[1]))
}

pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    eager(&[x], |t, v| t.softmax(v[0], axis))
}

/// Returns `(output, weights)`.
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let (qv, kv, vv) = (
        tape.constant(q.clone()),
        tape.constant(k.clone()),
        tape.constant(v.clone()),
    );
    let (out, w) = tape.scaled_dot_attention(qv, kv, vv)?;
    Ok((tape.value(out).clone(), tape.value(w).clone()))
}

pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    eager(&[x, w, b], |t, v| t.linear(v[0], v[1], v[2]))
}

pub fn relu(x: &Tensor) -> Tensor {
    eager(&[x], |t, v| Ok(t.relu(v[0]))).expect("relu is total")
}

pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    eager(&[x, gamma, beta], |t, v| t.layer_norm(v[0], v[1], v[2], eps))
}

/// Mean cross-entropy of 0-based `labels` under row-wise softmax of `logits`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    eager(&[logits], |t, v| t.cross_entropy(v[0], labels))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v > x[best] {
            best = i;
        }
    }
    best
}

/// Relative error with a floor on the denominator so that near-zero
/// gradients are compared on an absolute scale.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}
