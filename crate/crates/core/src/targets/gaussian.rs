//! Multivariate normal target with a known normalizer.

use nalgebra::{DMatrix, DVector};

use super::Target;
use crate::error::{dimension, domain, Result};
use crate::kernels::normal::LN_SQRT_2PI;

/// `log h(θ) = c − ½‖Rᵀ(θ − μ)‖²` where `RRᵀ` is the precision.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    pub mean: Vec<f64>,
    /// Lower Cholesky factor of the precision.
    pub prec_chol: DMatrix<f64>,
    pub offset: f64,
}

impl GaussianTarget {
    pub fn new(mean: Vec<f64>, prec_chol: DMatrix<f64>, offset: f64) -> Result<Self> {
        let d = mean.len();
        if prec_chol.shape() != (d, d) {
            return Err(dimension(format!("precision factor must be {d}×{d}")));
        }
        if (0..d).any(|i| !(prec_chol[(i, i)] > 0.0)) {
            return Err(domain("precision factor needs a positive diagonal"));
        }
        Ok(GaussianTarget { mean, prec_chol: prec_chol.lower_triangle(), offset })
    }

    pub fn from_covariance(mean: Vec<f64>, cov: &DMatrix<f64>, offset: f64) -> Result<Self> {
        let prec = cov
            .clone()
            .try_inverse()
            .ok_or_else(|| domain("covariance is singular"))?;
        let sym = (&prec + prec.transpose()) * 0.5;
        let l = sym.cholesky().ok_or_else(|| domain("covariance is not positive definite"))?.l();
        GaussianTarget::new(mean, l, offset)
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let p = &self.prec_chol * self.prec_chol.transpose();
        p.try_inverse().expect("positive definite precision")
    }

    /// `log ∫ h = c + (d/2) log 2π − log det R`.
    pub fn log_evidence(&self) -> f64 {
        let d = self.mean.len() as f64;
        self.offset + d * LN_SQRT_2PI - self.prec_chol.diagonal().map(f64::ln).sum()
    }

    fn whitened(&self, theta: &[f64]) -> DVector<f64> {
        let r = DVector::from_iterator(theta.len(), theta.iter().zip(&self.mean).map(|(a, b)| a - b));
        self.prec_chol.tr_mul(&r)
    }
}

impl Target for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_h(&self, theta: &[f64]) -> f64 {
        self.offset - 0.5 * self.whitened(theta).norm_squared()
    }

    fn log_h_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let w = self.whitened(theta);
        let g = -(&self.prec_chol * &w);
        (self.offset - 0.5 * w.norm_squared(), g.as_slice().to_vec())
    }
}
