//! Adam optimizer over flat f64 parameter slices, one instance per parameter
//! group so each group carries its own learning rate and moment buffers.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Step counter for bias correction.
    pub t: u64,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64, n_params: usize) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// One bias-corrected update. `params` and `grads` must match the moment
    /// buffers in length.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    /// Grow the moment buffers for newly added parameters (zeros).
    pub fn extend(&mut self, added: usize) {
        self.m.extend(std::iter::repeat(0.0).take(added));
        self.v.extend(std::iter::repeat(0.0).take(added));
    }

    /// Drop the moments of removed parameters, keeping entries where `mask`
    /// is true. `stride` is the number of scalars per point.
    pub fn retain_mask(&mut self, mask: &[bool], stride: usize) {
        assert_eq!(mask.len() * stride, self.m.len());
        let mut keep = (0..self.m.len()).map(|i| mask[i / stride]);
        self.m.retain(|_| keep.next().unwrap());
        let mut keep = (0..self.v.len()).map(|i| mask[i / stride]);
        self.v.retain(|_| keep.next().unwrap());
    }

    /// Zero the moment buffers (used after opacity resets).
    pub fn reset_moments(&mut self) {
        self.m.iter_mut().for_each(|v| *v = 0.0);
        self.v.iter_mut().for_each(|v| *v = 0.0);
    }
}
