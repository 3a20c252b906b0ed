//! Stochastic-gradient ascent with ADAM or ADADELTA.
//!
//! Stiefel-constrained slices get their gradient projected onto the tangent
//! space before the update and are retracted with a QR step afterwards.

use serde::{Deserialize, Serialize};

use crate::error::{dimension, Result};
use crate::kernels::stiefel::{project_slice, retract_slice};
use crate::layout::{IndexMap, Transform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
    Adadelta { rho: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::adam(0.01)
    }
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn adadelta() -> Self {
        Optimizer::Adadelta { rho: 0.95, eps: 1e-6 }
    }
}

/// Optimizer accumulators. For ADAM `a` and `b` are the first and second
/// moments; for ADADELTA they are the running means of `g²` and `Δ²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub optimizer: Optimizer,
    pub t: u64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl OptimState {
    pub fn new(optimizer: Optimizer, n: usize) -> Self {
        OptimState { optimizer, t: 0, a: vec![0.0; n], b: vec![0.0; n] }
    }

    /// One ascent step on `lambda`. A non-finite gradient or update leaves
    /// both `lambda` and the accumulators untouched and returns `false`.
    pub fn step(&mut self, lambda: &mut [f64], grad: &[f64], im: &IndexMap) -> Result<bool> {
        let n = lambda.len();
        if grad.len() != n || self.a.len() != n || im.len() != n {
            return Err(dimension(format!(
                "optimizer step with λ {n}, gradient {}, state {}, index map {}",
                grad.len(),
                self.a.len(),
                im.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Ok(false);
        }
        let mut g = grad.to_vec();
        for s in &im.slices {
            if let Transform::Stiefel { rows, cols } = s.transform {
                let r = s.offset..s.offset + s.len;
                project_slice(&lambda[r.clone()], &mut g[r], rows, cols);
            }
        }
        let mut a = self.a.clone();
        let mut b = self.b.clone();
        let t = self.t + 1;
        let mut next = lambda.to_vec();
        match self.optimizer {
            Optimizer::Adam { lr, beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(t.min(i32::MAX as u64) as i32);
                let c2 = 1.0 - beta2.powi(t.min(i32::MAX as u64) as i32);
                for i in 0..n {
                    a[i] = beta1 * a[i] + (1.0 - beta1) * g[i];
                    b[i] = beta2 * b[i] + (1.0 - beta2) * g[i] * g[i];
                    next[i] += lr * (a[i] / c1) / ((b[i] / c2).sqrt() + eps);
                }
            }
            Optimizer::Adadelta { rho, eps } => {
                for i in 0..n {
                    a[i] = rho * a[i] + (1.0 - rho) * g[i] * g[i];
                    let dx = ((b[i] + eps).sqrt() / (a[i] + eps).sqrt()) * g[i];
                    b[i] = rho * b[i] + (1.0 - rho) * dx * dx;
                    next[i] += dx;
                }
            }
        }
        for s in &im.slices {
            if let Transform::Stiefel { rows, cols } = s.transform {
                retract_slice(&mut next[s.offset..s.offset + s.len], rows, cols);
            }
        }
        if next.iter().chain(&a).chain(&b).any(|v| !v.is_finite()) {
            return Ok(false);
        }
        lambda.copy_from_slice(&next);
        self.a = a;
        self.b = b;
        self.t = t;
        Ok(true)
    }
}
