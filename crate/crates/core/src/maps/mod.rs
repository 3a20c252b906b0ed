//! Per-block transport maps `θ_j = T_j(u_j)` from the uniform cube to `ℝ^{d_j}`.
//!
//! Both maps act on Gaussian scores `z = Φ⁻¹(u)`:
//!
//! * M1: `θ = b + s ∘ k_η(L z)` with unit lower-triangular `L`
//! * M2: `θ = b + k_η(E z)` with `E = J Jᵀ + D²`
//!
//! Parameters arrive as unconstrained slices of the flat vector `λ`; every
//! gradient routine returns derivatives with respect to those raw values.

pub mod m1;
pub mod m2;
pub mod yj;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{dimension, domain, Result};
use crate::kernels::normal::{normal_log_pdf, quantile_unchecked, U_CLIP};
use crate::layout::{IndexMap, Transform};

pub use m1::M1Params;
pub use m2::M2Params;
pub use yj::{yj_eval, yj_forward, yj_inverse, yj_inverse_deriv, yj_log_deriv, YjEval};

/// Sparsity pattern of the M1 triangular factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LPattern {
    Identity,
    Dense,
    /// `L` itself has `k` sub-diagonals.
    BandedL(usize),
    /// `L⁻¹` has `k` sub-diagonals; `y = L z` is evaluated by a banded solve.
    BandedLinv(usize),
}

/// Structure of one block's map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MapSpec {
    M1 { dim: usize, l: LPattern, warp: bool },
    M2 { dim: usize, rank: usize, warp: bool },
}

/// Forward intermediates reused by the gradient routines.
#[derive(Debug, Clone)]
pub struct MapEval {
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub theta: Vec<f64>,
    /// Warp evaluations at `y`; empty when the warp is the identity.
    pub warp: Vec<YjEval>,
}

impl MapEval {
    #[inline]
    fn kprime(&self, i: usize) -> f64 {
        if self.warp.is_empty() {
            1.0
        } else {
            self.warp[i].dx
        }
    }
}

impl MapSpec {
    pub fn dim(&self) -> usize {
        match *self {
            MapSpec::M1 { dim, .. } | MapSpec::M2 { dim, .. } => dim,
        }
    }

    pub fn warped(&self) -> bool {
        match *self {
            MapSpec::M1 { warp, .. } | MapSpec::M2 { warp, .. } => warp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MapSpec::M1 { dim, .. } if dim == 0 => Err(dimension("map block must be nonempty")),
            MapSpec::M2 { dim, rank, .. } if dim == 0 || (rank >= dim && rank > 0) => Err(dimension(format!(
                "M2 rank {rank} must be below the block size {dim}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn index_map(&self) -> IndexMap {
        let mut m = IndexMap::default();
        let d = self.dim();
        m.push("b", d, Transform::Identity);
        match *self {
            MapSpec::M1 { l, .. } => {
                m.push("s", d, Transform::Square);
                let n = m1::tri_pattern(l).stored(d);
                if n > 0 {
                    m.push("L", n, Transform::Identity);
                }
            }
            MapSpec::M2 { rank, .. } => {
                if rank > 0 {
                    m.push("J", d * rank, Transform::Identity);
                }
                m.push("D", d, Transform::Square);
            }
        }
        if self.warped() {
            m.push("eta", d, Transform::TwoSigmoid);
        }
        m
    }

    pub fn n_params(&self) -> usize {
        self.index_map().len()
    }

    /// Starting values: zero location, scale 0.1, `L = I`, small random `J`,
    /// identity warp.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let mut p = vec![0.0; d];
        match *self {
            MapSpec::M1 { l, .. } => {
                p.extend(std::iter::repeat_n(0.1f64.sqrt(), d));
                p.extend(std::iter::repeat_n(0.0, m1::tri_pattern(l).stored(d)));
            }
            MapSpec::M2 { rank, .. } => {
                p.extend((0..d * rank).map(|_| 0.01 * rng.sample::<f64, _>(StandardNormal)));
                p.extend(std::iter::repeat_n(0.1f64.sqrt(), d));
            }
        }
        if self.warped() {
            p.extend(std::iter::repeat_n(0.0, d));
        }
        p
    }

    pub fn params(&self, raw: &[f64]) -> Result<MapParams> {
        if raw.len() != self.n_params() {
            return Err(dimension(format!("map expects {} parameters, got {}", self.n_params(), raw.len())));
        }
        match *self {
            MapSpec::M1 { dim, l, warp } => Ok(MapParams::M1(M1Params::from_raw(dim, l, warp, raw)?)),
            MapSpec::M2 { dim, rank, warp } => Ok(MapParams::M2(M2Params::from_raw(dim, rank, warp, raw)?)),
        }
    }
}

/// Decoded (constrained) parameters of one map.
#[derive(Debug, Clone)]
pub enum MapParams {
    M1(M1Params),
    M2(M2Params),
}

impl MapParams {
    pub fn dim(&self) -> usize {
        match self {
            MapParams::M1(p) => p.b.len(),
            MapParams::M2(p) => p.b.len(),
        }
    }

    /// Forward map on Gaussian scores.
    pub fn forward_z(&self, z: &[f64]) -> Result<MapEval> {
        match self {
            MapParams::M1(p) => Ok(p.forward_z(z)),
            MapParams::M2(p) => Ok(p.forward_z(z)),
        }
    }

    /// Forward map on uniforms. Each `u_i` must lie strictly inside `(0, 1)`;
    /// values closer than `1e-14` to either end are clipped.
    pub fn forward(&self, u: &[f64]) -> Result<MapEval> {
        let z = scores_from_uniform(u)?;
        self.forward_z(&z)
    }

    /// `log |det ∂θ/∂z|` at the evaluation point.
    pub fn log_det_jac(&self, ev: &MapEval) -> Result<f64> {
        match self {
            MapParams::M1(p) => Ok(p.log_det_jac(ev)),
            MapParams::M2(p) => p.log_det_jac(ev),
        }
    }

    /// Accumulates `[∂θ/∂λ]ᵀ θ̄ + w ∂ log|det ∂θ/∂z| / ∂λ` into `grad` (raw
    /// coordinates) and returns the matching cotangent on `z`.
    pub fn backward(&self, ev: &MapEval, theta_bar: &[f64], logdet_weight: f64, grad: &mut [f64]) -> Result<Vec<f64>> {
        match self {
            MapParams::M1(p) => Ok(p.backward(ev, theta_bar, logdet_weight, grad)),
            MapParams::M2(p) => p.backward(ev, theta_bar, logdet_weight, grad),
        }
    }

    /// `[∂θ/∂λ]ᵀ c` in raw coordinates.
    pub fn param_jacobian_apply(&self, ev: &MapEval, cotangent: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.n_raw()];
        self.backward(ev, cotangent, 0.0, &mut g)?;
        Ok(g)
    }

    /// Solves `[∂θ/∂z]ᵀ x = v`.
    pub fn solve_jac_t(&self, ev: &MapEval, v: &[f64]) -> Result<Vec<f64>> {
        match self {
            MapParams::M1(p) => Ok(p.solve_jac_t(ev, v)),
            MapParams::M2(p) => p.solve_jac_t(ev, v),
        }
    }

    /// Gaussian scores `z = T⁻¹(θ)` in score space.
    pub fn inverse_z(&self, theta: &[f64]) -> Result<Vec<f64>> {
        match self {
            MapParams::M1(p) => Ok(p.inverse_z(theta)),
            MapParams::M2(p) => p.inverse_z(theta),
        }
    }

    /// `u = T⁻¹(θ)`.
    pub fn inverse(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.inverse_z(theta)?.into_iter().map(crate::kernels::normal_cdf).collect())
    }

    /// Log density of the induced marginal `q_j` at `θ`.
    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        let z = self.inverse_z(theta)?;
        let ev = self.forward_z(&z)?;
        let lphi: f64 = z.iter().map(|&v| normal_log_pdf(v)).sum();
        Ok(lphi - self.log_det_jac(&ev)?)
    }

    /// `∇_θ log q_j(θ)` with the parameters held fixed.
    pub fn grad_log_density(&self, ev: &MapEval) -> Result<Vec<f64>> {
        // ∇_z [log φ(z) − log|det|] pulled back through z = T⁻¹(θ)
        let mut scratch = vec![0.0; self.n_raw()];
        let zero = vec![0.0; ev.z.len()];
        let dlogdet = self.backward(ev, &zero, 1.0, &mut scratch)?;
        let v: Vec<f64> = ev.z.iter().zip(&dlogdet).map(|(z, g)| -z - g).collect();
        self.solve_jac_t(ev, &v)
    }

    fn n_raw(&self) -> usize {
        match self {
            MapParams::M1(p) => p.n_raw(),
            MapParams::M2(p) => p.n_raw(),
        }
    }
}

/// Elementwise `Φ⁻¹(u)` with clipping into `[1e-14, 1 − 1e-14]`.
pub fn scores_from_uniform(u: &[f64]) -> Result<Vec<f64>> {
    u.iter()
        .map(|&v| {
            if !(v > 0.0 && v < 1.0) {
                return Err(domain(format!("uniform input must lie in (0, 1), got {v}")));
            }
            Ok(quantile_unchecked(v.clamp(U_CLIP, 1.0 - U_CLIP)))
        })
        .collect()
}
