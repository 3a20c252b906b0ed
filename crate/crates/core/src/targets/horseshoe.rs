//! Logistic regression with a non-centered horseshoe prior.
//!
//! `θ = (α, δ̃, ξ̃)` with `β_i = α_i e^{δ̃_i} e^{ξ̃}`, `α_i ~ N(0, 1)` and
//! half-Cauchy local and global scales expressed on the log scale.

use super::{log1pexp, sigmoid, Design, Target};
use crate::error::{domain, Result};
use crate::kernels::normal::LN_SQRT_2PI;
use crate::parallel::{map_chunks, Parallelism};

const ROW_CHUNK: usize = 256;

#[derive(Debug, Clone)]
pub struct LogisticHorseshoe {
    x: Design,
    y: Vec<f64>,
    parallelism: Parallelism,
}

/// `log p(t)` for `t = log s`, `s ~ C⁺(0, 1)`.
#[inline]
fn log_half_cauchy_log_scale(t: f64) -> f64 {
    (2.0 / std::f64::consts::PI).ln() - log1pexp(2.0 * t) + t
}

impl LogisticHorseshoe {
    pub fn new(x: Design, y: Vec<f64>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(crate::error::dimension(format!("X has {} rows but y has {} entries", x.rows(), y.len())));
        }
        if let Some(v) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(domain(format!("labels must be 0 or 1, got {v}")));
        }
        Ok(LogisticHorseshoe { x, y, parallelism: Parallelism::default() })
    }

    pub fn with_parallelism(mut self, p: Parallelism) -> Self {
        self.parallelism = p;
        self
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn design(&self) -> &Design {
        &self.x
    }

    pub fn labels(&self) -> &[f64] {
        &self.y
    }

    /// Block sizes `(m, m, 1)` of the parameter layout.
    pub fn blocks(&self) -> Vec<usize> {
        vec![self.n_features(), self.n_features(), 1]
    }

    pub fn beta(&self, theta: &[f64]) -> Vec<f64> {
        let m = self.n_features();
        let xi = theta[2 * m];
        (0..m).map(|i| theta[i] * (theta[m + i] + xi).exp()).collect()
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        let m = self.n_features();
        let a: f64 = theta[..m].iter().map(|v| -LN_SQRT_2PI - 0.5 * v * v).sum();
        let s: f64 = theta[m..].iter().map(|&t| log_half_cauchy_log_scale(t)).sum();
        a + s
    }

    fn log_lik(&self, beta: &[f64]) -> f64 {
        map_chunks(self.parallelism, self.n_obs(), ROW_CHUNK, |rows| {
            rows.map(|r| {
                let eta = self.x.row_dot(r, beta);
                self.y[r] * eta - log1pexp(eta)
            })
            .sum::<f64>()
        })
        .into_iter()
        .sum()
    }

    /// Log likelihood and `∂/∂β`.
    fn log_lik_grad(&self, beta: &[f64]) -> (f64, Vec<f64>) {
        let m = self.n_features();
        let parts = map_chunks(self.parallelism, self.n_obs(), ROW_CHUNK, |rows| {
            let mut g = vec![0.0; m];
            let mut v = 0.0;
            for r in rows {
                let eta = self.x.row_dot(r, beta);
                v += self.y[r] * eta - log1pexp(eta);
                self.x.row_axpy(r, self.y[r] - sigmoid(eta), &mut g);
            }
            (v, g)
        });
        let mut g = vec![0.0; m];
        let mut v = 0.0;
        for (pv, pg) in parts {
            v += pv;
            g.iter_mut().zip(&pg).for_each(|(a, b)| *a += b);
        }
        (v, g)
    }
}

impl Target for LogisticHorseshoe {
    fn dim(&self) -> usize {
        2 * self.n_features() + 1
    }

    fn log_h(&self, theta: &[f64]) -> f64 {
        self.log_lik(&self.beta(theta)) + self.log_prior(theta)
    }

    fn log_h_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let m = self.n_features();
        let beta = self.beta(theta);
        let (ll, bbar) = self.log_lik_grad(&beta);
        let xi = theta[2 * m];
        let mut g = vec![0.0; 2 * m + 1];
        let mut gxi = 0.0;
        for i in 0..m {
            let bb = bbar[i] * beta[i];
            g[i] = bbar[i] * (theta[m + i] + xi).exp() - theta[i];
            g[m + i] = bb + 1.0 - 2.0 * sigmoid(2.0 * theta[m + i]);
            gxi += bb;
        }
        g[2 * m] = gxi + 1.0 - 2.0 * sigmoid(2.0 * xi);
        (ll + self.log_prior(theta), g)
    }
}
