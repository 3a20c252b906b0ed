//! Central finite differences.

use serde::Serialize;

/// Per-coordinate comparison of an analytic gradient with finite differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub rel_error: Vec<f64>,
    pub max_rel_error: f64,
    /// Coordinates where `f` was not finite in the stencil.
    pub non_finite: Vec<usize>,
}

/// `|a − b| / max(|a|, |b|, 1)`.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Default step `1e-6 · max(1, |λ_i|)`.
pub fn default_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

/// Central differences with the default step. Non-finite stencil values
/// give `NaN` in that coordinate.
pub fn finite_diff_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64]) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = default_step(x[i]);
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            if fp.is_finite() && fm.is_finite() {
                (fp - fm) / (2.0 * h)
            } else {
                f64::NAN
            }
        })
        .collect()
}

pub fn check_gradient<F: FnMut(&[f64]) -> f64>(f: F, x: &[f64], analytic: &[f64]) -> GradCheckReport {
    let numeric = finite_diff_gradient(f, x);
    let mut non_finite = Vec::new();
    let rel: Vec<f64> = analytic
        .iter()
        .zip(&numeric)
        .enumerate()
        .map(|(i, (&a, &n))| {
            if n.is_nan() {
                non_finite.push(i);
                f64::INFINITY
            } else {
                rel_error(a, n)
            }
        })
        .collect();
    let max_rel_error = rel.iter().fold(0.0f64, |m, &v| m.max(v));
    GradCheckReport { analytic: analytic.to_vec(), numeric, rel_error: rel, max_rel_error, non_finite }
}
