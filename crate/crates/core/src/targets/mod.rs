//! Unnormalized log posteriors `log h(θ) = log p(y|θ) + log p(θ)` with
//! analytic gradients.

mod design;
mod gaussian;
mod horseshoe;

pub use design::{simulate_logistic_dataset, Csr, Design, SimulatedData};
pub use gaussian::GaussianTarget;
pub use horseshoe::LogisticHorseshoe;

pub trait Target: Sync {
    fn dim(&self) -> usize;

    fn log_h(&self, theta: &[f64]) -> f64;

    /// `(log h, ∇ log h)`.
    fn log_h_grad(&self, theta: &[f64]) -> (f64, Vec<f64>);
}

/// `log(1 + eˣ)` without overflow.
#[inline]
pub(crate) fn log1pexp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
