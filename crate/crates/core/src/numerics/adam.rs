use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Moment estimates for Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zero moments shaped like `params`, with β = (0.9, 0.999) and ε = 1e-8.
    pub fn new(params: &[Tensor]) -> Self {
        Self::with_hyper(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(params: &[Tensor], beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            beta1,
            beta2,
            epsilon,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, i: usize) -> &[f64] {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &[f64] {
        &self.v[i]
    }

    /// One update using each tensor's own gradient buffer; tensors without a
    /// buffer are treated as having zero gradient.
    pub fn step_params(&mut self, params: &mut [Tensor], lr: f64) -> Result<()> {
        self.check(params.len(), |i| params[i].len())?;
        self.t += 1;
        for (i, p) in params.iter_mut().enumerate() {
            let g = p.grad().map(<[f64]>::to_vec);
            self.update(i, p.data_mut(), g.as_deref(), lr);
        }
        Ok(())
    }

    fn check(&self, n: usize, len: impl Fn(usize) -> usize) -> Result<()> {
        if n != self.m.len() {
            return Err(Error::Validation(format!(
                "adam state tracks {} parameters, got {n}",
                self.m.len()
            )));
        }
        for i in 0..n {
            if len(i) != self.m[i].len() {
                return Err(Error::shape("adam_step", &[self.m[i].len()], &[len(i)]));
            }
        }
        Ok(())
    }

    fn update(&mut self, i: usize, p: &mut [f64], g: Option<&[f64]>, lr: f64) {
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let (m, v) = (&mut self.m[i], &mut self.v[i]);
        for j in 0..p.len() {
            let gj = g.map_or(0.0, |g| g[j]);
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            p[j] -= lr * mhat / (vhat.sqrt() + self.epsilon);
        }
    }
}

/// Applies one Adam step to `params` with explicit gradients.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Vec<f64>],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Validation(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.len() != g.len() {
            return Err(Error::shape("adam_step", p.shape(), &[g.len()]));
        }
    }
    state.check(params.len(), |i| params[i].len())?;
    state.t += 1;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        state.update(i, p.data_mut(), Some(g), lr);
    }
    Ok(())
}
