//! Adaptive-moment gradient optimizer over flat parameter vectors, plus
//! global gradient-norm clipping.

use nalgebra::DVector;

use super::NetError;

/// First/second-moment state with bias correction. One instance per
/// parameter vector it optimizes.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: DVector<f64>,
    v: DVector<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        AdamState {
            m: DVector::zeros(num_params),
            v: DVector::zeros(num_params),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(
        &mut self,
        params: &mut DVector<f64>,
        grads: &DVector<f64>,
        lr: f64,
    ) -> Result<(), NetError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NetError::ShapeMismatch { expected: self.m.len(), got: grads.len() });
        }
        self.t += 1;
        let bias1 = 1.0 - self.beta1.powi(self.t as i32);
        let bias2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Scales `grads` in place so its L2 norm is at most `max_norm`; returns the
/// pre-clip norm.
pub fn clip_global_norm(grads: &mut DVector<f64>, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > max_norm && norm > 0.0 {
        *grads *= max_norm / norm;
    }
    norm
}
