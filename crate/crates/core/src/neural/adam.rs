use ndarray::{Array2, Zip};

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moment estimates for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
    step: u64,
}

impl AdamState {
    /// Zeroed moments shaped like `params`.
    pub fn new(params: &[Array2<f64>]) -> Self {
        AdamState {
            first: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
            second: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>], lr: f64) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::LengthMismatch {
                left: params.len(),
                right: grads.len(),
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.dim() != g.dim() || p.dim() != m.dim() {
                return Err(Error::InvalidArgument(format!(
                    "shape mismatch: param {:?}, grad {:?}, state {:?}",
                    p.dim(),
                    g.dim(),
                    m.dim()
                )));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + EPSILON);
            });
        }
        Ok(())
    }
}

/// Euclidean norm over all gradient tensors.
pub fn global_norm(grads: &[Array2<f64>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Array2<f64>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
    norm
}
