//! Vector copulas: between-block dependence in Gaussian-score space.
//!
//! A draw produces scores `z = Φ⁻¹(u)` for all `d` coordinates. Each family
//! supplies its sampling path, the per-draw log density `log c(u)` (or, for
//! the Kendall family, the closed-form expectation of it) and reverse-mode
//! derivatives of both with respect to the raw parameters and the scores.

pub mod gvc_factor;
pub mod gvc_ortho;
pub mod kvc;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dimension, spec, Result};
use crate::kernels::normal::{normal_cdf, quantile_unchecked, z_max, U_CLIP};
use crate::layout::IndexMap;

pub use gvc_factor::GvcFactor;
pub use gvc_ortho::GvcOrtho;
pub use kvc::Kvc;

/// Block sizes `d_1..d_M` of `θ = (θ_1, …, θ_M)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockPartition {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(spec("a partition needs at least one block"));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(spec("block sizes must be positive"));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        for s in &sizes {
            offsets.push(offsets.last().unwrap() + s);
        }
        Ok(BlockPartition { sizes, offsets })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn offset(&self, j: usize) -> usize {
        self.offsets[j]
    }

    pub fn range(&self, j: usize) -> std::ops::Range<usize> {
        self.offsets[j]..self.offsets[j + 1]
    }
}

/// Structure of a vector copula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CopulaSpec {
    Independence { dim: usize },
    GvcFactor(GvcFactor),
    GvcOrtho(GvcOrtho),
    Kvc(Kvc),
    /// The outer copula acts on coarse blocks; the inner one refines coarse
    /// block `refine`, taking that block's outer scores as its noise.
    Nested { outer: Box<CopulaSpec>, refine: usize, inner: Box<CopulaSpec> },
}

/// Family-specific intermediates of one draw.
#[derive(Debug, Clone)]
pub enum DrawCache {
    None,
    GvcFactor(gvc_factor::Cache),
    GvcOrtho(gvc_ortho::Cache),
    Kvc(kvc::Cache),
    Nested { outer: Box<CopulaDraw>, inner: Box<CopulaDraw> },
}

/// One draw from the copula in score space.
#[derive(Debug, Clone)]
pub struct CopulaDraw {
    /// Scores after clipping `u` into `[1e-14, 1 − 1e-14]`.
    pub z: Vec<f64>,
    /// Coordinates whose score was clipped; they carry no gradient.
    pub clipped: Vec<bool>,
    pub normals: Vec<f64>,
    pub exps: Vec<f64>,
    pub cache: DrawCache,
}

impl CopulaDraw {
    /// `u = Φ(z)`.
    pub fn uniforms(&self) -> Vec<f64> {
        self.z.iter().map(|&v| normal_cdf(v)).collect()
    }
}

/// Clips scores to `±z_max`, recording which ones moved.
pub(crate) fn clip_scores(raw: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let zm = z_max();
    raw.iter()
        .map(|&v| if v.abs() > zm { (zm.copysign(v), true) } else { (v, false) })
        .unzip()
}

pub(crate) fn mask(zbar: &[f64], clipped: &[bool]) -> Vec<f64> {
    zbar.iter().zip(clipped).map(|(&g, &c)| if c { 0.0 } else { g }).collect()
}

/// Scores from uniforms for density evaluation.
pub(crate) fn scores(u: &[f64]) -> Result<Vec<f64>> {
    crate::maps::scores_from_uniform(u)
}

impl CopulaSpec {
    pub fn dim(&self) -> usize {
        match self {
            CopulaSpec::Independence { dim } => *dim,
            CopulaSpec::GvcFactor(g) => g.partition.total(),
            CopulaSpec::GvcOrtho(g) => g.partition.total(),
            CopulaSpec::Kvc(k) => k.partition.total(),
            CopulaSpec::Nested { outer, .. } => outer.dim(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            CopulaSpec::Independence { .. } => "independence".into(),
            CopulaSpec::GvcFactor(g) => format!("GVC-F{}", g.rank),
            CopulaSpec::GvcOrtho(g) if g.identity => "GVC-I".into(),
            CopulaSpec::GvcOrtho(_) => "GVC-O".into(),
            CopulaSpec::Kvc(_) => "KVC-G".into(),
            CopulaSpec::Nested { outer, inner, .. } => format!("Nested({}∘{})", outer.name(), inner.name()),
        }
    }

    /// Checks structural consistency.
    pub fn validate(&self) -> Result<()> {
        match self {
            CopulaSpec::Independence { dim } if *dim == 0 => Err(spec("copula dimension must be positive")),
            CopulaSpec::Independence { .. } => Ok(()),
            CopulaSpec::GvcFactor(g) => g.validate(),
            CopulaSpec::GvcOrtho(g) => g.validate(),
            CopulaSpec::Kvc(k) => k.validate(),
            CopulaSpec::Nested { outer, refine, inner } => {
                outer.validate()?;
                inner.validate()?;
                if matches!(**outer, CopulaSpec::Nested { .. }) {
                    return Err(spec("only one level of nesting is supported"));
                }
                if !matches!(**inner, CopulaSpec::GvcOrtho(_) | CopulaSpec::Independence { .. }) {
                    return Err(spec("the inner copula of a nested copula must be GVC-I, GVC-O or independence"));
                }
                let coarse = outer.coarse_sizes();
                let Some(&size) = coarse.get(*refine) else {
                    return Err(spec(format!("refined block {refine} does not exist in the outer copula")));
                };
                if inner.dim() != size {
                    return Err(spec(format!(
                        "inner copula covers {} coordinates but refined block has {size}",
                        inner.dim()
                    )));
                }
                Ok(())
            }
        }
    }

    /// Block sizes the copula acts on (for independence, one block).
    pub fn coarse_sizes(&self) -> Vec<usize> {
        match self {
            CopulaSpec::Independence { dim } => vec![*dim],
            CopulaSpec::GvcFactor(g) => g.partition.sizes().to_vec(),
            CopulaSpec::GvcOrtho(g) => g.partition.sizes().to_vec(),
            CopulaSpec::Kvc(k) => k.partition.sizes().to_vec(),
            CopulaSpec::Nested { outer, refine, inner } => {
                let mut s = Vec::new();
                for (j, &size) in outer.coarse_sizes().iter().enumerate() {
                    if j == *refine {
                        s.extend(inner.coarse_sizes());
                    } else {
                        s.push(size);
                    }
                }
                s
            }
        }
    }

    fn nested_range(outer: &CopulaSpec, refine: usize) -> std::ops::Range<usize> {
        let sizes = outer.coarse_sizes();
        let start: usize = sizes[..refine].iter().sum();
        start..start + sizes[refine]
    }

    pub fn index_map(&self) -> IndexMap {
        match self {
            CopulaSpec::Independence { .. } => IndexMap::default(),
            CopulaSpec::GvcFactor(g) => g.index_map(),
            CopulaSpec::GvcOrtho(g) => g.index_map(),
            CopulaSpec::Kvc(k) => k.index_map(),
            CopulaSpec::Nested { outer, inner, .. } => {
                let mut m = IndexMap::default();
                m.extend_prefixed("outer.", &outer.index_map());
                m.extend_prefixed("inner.", &inner.index_map());
                m
            }
        }
    }

    pub fn n_params(&self) -> usize {
        self.index_map().len()
    }

    fn split<'a>(&self, p: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        match self {
            CopulaSpec::Nested { outer, .. } => p.split_at(outer.n_params()),
            _ => (p, &[]),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            CopulaSpec::Independence { .. } => Vec::new(),
            CopulaSpec::GvcFactor(g) => g.init(rng),
            CopulaSpec::GvcOrtho(g) => g.init(rng),
            CopulaSpec::Kvc(k) => k.init(),
            CopulaSpec::Nested { outer, inner, .. } => {
                let mut p = outer.init(rng);
                p.extend(inner.init(rng));
                p
            }
        }
    }

    /// Numbers of standard normals and unit exponentials one draw consumes.
    pub fn noise_dims(&self) -> (usize, usize) {
        match self {
            CopulaSpec::Independence { dim } => (*dim, 0),
            CopulaSpec::GvcFactor(g) => (g.partition.total() + g.rank, 0),
            CopulaSpec::GvcOrtho(g) => (g.partition.total(), 0),
            CopulaSpec::Kvc(k) => (k.partition.n_blocks(), k.partition.total()),
            CopulaSpec::Nested { outer, .. } => outer.noise_dims(),
        }
    }

    fn check_params(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(dimension(format!("copula expects {} parameters, got {}", self.n_params(), p.len())));
        }
        Ok(())
    }

    /// The generative step `u = g₁(ε, λ_vc)`, returned as scores.
    pub fn sample(&self, p: &[f64], normals: &[f64], exps: &[f64]) -> Result<CopulaDraw> {
        self.check_params(p)?;
        let (nn, ne) = self.noise_dims();
        if normals.len() != nn || exps.len() != ne {
            return Err(dimension(format!(
                "{} needs {nn} normals and {ne} exponentials, got {} and {}",
                self.name(),
                normals.len(),
                exps.len()
            )));
        }
        self.sample_unchecked(p, normals, exps)
    }

    fn sample_unchecked(&self, p: &[f64], normals: &[f64], exps: &[f64]) -> Result<CopulaDraw> {
        match self {
            CopulaSpec::Independence { .. } => {
                let (z, clipped) = clip_scores(normals);
                Ok(CopulaDraw { z, clipped, normals: normals.to_vec(), exps: Vec::new(), cache: DrawCache::None })
            }
            CopulaSpec::GvcFactor(g) => g.sample(p, normals),
            CopulaSpec::GvcOrtho(g) => g.sample(p, normals),
            CopulaSpec::Kvc(k) => k.sample(p, normals, exps),
            CopulaSpec::Nested { outer, refine, inner } => {
                let (po, pi) = self.split(p);
                let od = outer.sample_unchecked(po, normals, exps)?;
                let r = Self::nested_range(outer, *refine);
                let id = inner.sample_unchecked(pi, &od.z[r.clone()], &[])?;
                let mut z = od.z.clone();
                let mut clipped = od.clipped.clone();
                z[r.clone()].copy_from_slice(&id.z);
                clipped[r].copy_from_slice(&id.clipped);
                Ok(CopulaDraw {
                    z,
                    clipped,
                    normals: normals.to_vec(),
                    exps: exps.to_vec(),
                    cache: DrawCache::Nested { outer: Box::new(od), inner: Box::new(id) },
                })
            }
        }
    }

    /// Whether the ELBO uses a per-draw `log c` for some part of the copula.
    pub fn has_per_draw_density(&self) -> bool {
        match self {
            CopulaSpec::Independence { .. } | CopulaSpec::Kvc(_) => false,
            CopulaSpec::GvcFactor(_) | CopulaSpec::GvcOrtho(_) => true,
            CopulaSpec::Nested { outer, inner, .. } => outer.has_per_draw_density() || inner.has_per_draw_density(),
        }
    }

    /// Sum of the per-draw log-density terms at the draw.
    pub fn per_draw_log_c(&self, p: &[f64], draw: &CopulaDraw) -> Result<f64> {
        match (self, &draw.cache) {
            (CopulaSpec::Independence { .. }, _) | (CopulaSpec::Kvc(_), _) => Ok(0.0),
            (CopulaSpec::GvcFactor(g), DrawCache::GvcFactor(c)) => g.log_c(p, c, &draw.z),
            (CopulaSpec::GvcOrtho(g), _) => Ok(g.log_c(p, &draw.z)),
            (CopulaSpec::Nested { outer, inner, .. }, DrawCache::Nested { outer: od, inner: id }) => {
                let (po, pi) = self.split(p);
                Ok(outer.per_draw_log_c(po, od)? + inner.per_draw_log_c(pi, id)?)
            }
            _ => Err(spec("draw does not belong to this copula")),
        }
    }

    /// `E_c[log c]` for the parts whose expectation is used in closed form.
    /// For the Kendall family this is `−log|G̃|`.
    pub fn expected_log_c(&self, p: &[f64]) -> f64 {
        match self {
            CopulaSpec::Kvc(k) => -k.entropy_term(p),
            CopulaSpec::Nested { outer, inner, .. } => {
                let (po, pi) = self.split(p);
                outer.expected_log_c(po) + inner.expected_log_c(pi)
            }
            _ => 0.0,
        }
    }

    /// The copula's contribution to the single-draw ELBO estimate.
    pub fn elbo_term(&self, p: &[f64], draw: &CopulaDraw) -> Result<f64> {
        Ok(-self.per_draw_log_c(p, draw)? - self.expected_log_c(p))
    }

    /// Exact gradient, in raw parameters, of `z̄ᵀ z(λ) + elbo_term(λ)` with the
    /// noise held fixed. Returns the parameter gradient and the cotangent on
    /// the standard-normal noise.
    pub fn total_backward(&self, p: &[f64], draw: &CopulaDraw, zbar: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        match (self, &draw.cache) {
            (CopulaSpec::Independence { .. }, _) => Ok((Vec::new(), mask(zbar, &draw.clipped))),
            (CopulaSpec::GvcFactor(g), DrawCache::GvcFactor(c)) => g.total_backward(p, c, draw, zbar),
            (CopulaSpec::GvcOrtho(g), DrawCache::GvcOrtho(c)) => g.total_backward(p, c, draw, zbar),
            (CopulaSpec::Kvc(k), DrawCache::Kvc(c)) => {
                let (mut g, e) = k.sample_vjp(p, c, draw, zbar);
                k.entropy_grad(p, &mut g);
                Ok((g, e))
            }
            (CopulaSpec::Nested { outer, refine, inner }, DrawCache::Nested { outer: od, inner: id }) => {
                let (po, pi) = self.split(p);
                let r = Self::nested_range(outer, *refine);
                let (gi, ei) = inner.total_backward(pi, id, &zbar[r.clone()])?;
                let mut zo = zbar.to_vec();
                zo[r].copy_from_slice(&ei);
                let (mut go, eo) = outer.total_backward(po, od, &zo)?;
                go.extend(gi);
                Ok((go, eo))
            }
            _ => Err(spec("draw does not belong to this copula")),
        }
    }

    /// `∇_z` of the per-draw log density, as a function of the final scores.
    pub fn score_z(&self, p: &[f64], draw: &CopulaDraw) -> Result<Vec<f64>> {
        match (self, &draw.cache) {
            (CopulaSpec::Independence { .. }, _) | (CopulaSpec::Kvc(_), _) => Ok(vec![0.0; draw.z.len()]),
            (CopulaSpec::GvcFactor(g), DrawCache::GvcFactor(c)) => Ok(g.log_c_grad(p, c, &draw.z)?.0),
            (CopulaSpec::GvcOrtho(g), _) => Ok(g.log_c_grad(p, &draw.z).0),
            (CopulaSpec::Nested { outer, refine, inner }, DrawCache::Nested { outer: od, inner: id }) => {
                let (po, pi) = self.split(p);
                let r = Self::nested_range(outer, *refine);
                let mut s = outer.score_z(po, od)?;
                let pulled = inner.noise_solve_t(pi, &s[r.clone()])?;
                let si = inner.score_z(pi, id)?;
                for (k, i) in r.enumerate() {
                    s[i] = pulled[k] + si[k];
                }
                Ok(s)
            }
            _ => Err(spec("draw does not belong to this copula")),
        }
    }

    /// Gradient in raw parameters of `z̄ᵀ z(λ) − E[log c](λ)`: the sampling
    /// path plus any closed-form expectation, with per-draw densities frozen.
    pub fn path_backward(&self, p: &[f64], draw: &CopulaDraw, zbar: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        match (self, &draw.cache) {
            (CopulaSpec::Independence { .. }, _) => Ok((Vec::new(), mask(zbar, &draw.clipped))),
            (CopulaSpec::GvcFactor(g), DrawCache::GvcFactor(c)) => g.sample_vjp(p, c, draw, zbar),
            (CopulaSpec::GvcOrtho(g), DrawCache::GvcOrtho(c)) => Ok(g.sample_vjp(p, c, draw, zbar)),
            (CopulaSpec::Kvc(k), DrawCache::Kvc(c)) => {
                let (mut g, e) = k.sample_vjp(p, c, draw, zbar);
                k.entropy_grad(p, &mut g);
                Ok((g, e))
            }
            (CopulaSpec::Nested { outer, refine, inner }, DrawCache::Nested { outer: od, inner: id }) => {
                let (po, pi) = self.split(p);
                let r = Self::nested_range(outer, *refine);
                let (gi, ei) = inner.path_backward(pi, id, &zbar[r.clone()])?;
                let mut zo = zbar.to_vec();
                zo[r].copy_from_slice(&ei);
                let (mut go, eo) = outer.path_backward(po, od, &zo)?;
                go.extend(gi);
                Ok((go, eo))
            }
            _ => Err(spec("draw does not belong to this copula")),
        }
    }

    /// Solves `[∂z/∂ε]ᵀ x = y` for copulas usable as an inner copula.
    fn noise_solve_t(&self, p: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        match self {
            CopulaSpec::Independence { .. } => Ok(y.to_vec()),
            CopulaSpec::GvcOrtho(g) => Ok(g.noise_solve_t(p, y)),
            _ => Err(spec("only GVC-O, GVC-I and independence can be nested inside another copula")),
        }
    }

    /// Noise that reproduces scores `z` (inner copulas only).
    fn noise_inverse(&self, p: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        match self {
            CopulaSpec::Independence { .. } => Ok(z.to_vec()),
            CopulaSpec::GvcOrtho(g) => Ok(g.noise_inverse(p, z)),
            _ => Err(spec("only GVC-O, GVC-I and independence can be nested inside another copula")),
        }
    }

    /// `log c(u)` for `u` strictly inside the unit cube.
    pub fn log_density(&self, p: &[f64], u: &[f64]) -> Result<f64> {
        self.check_params(p)?;
        if u.len() != self.dim() {
            return Err(dimension(format!("u has length {}, copula has dimension {}", u.len(), self.dim())));
        }
        match self {
            CopulaSpec::Kvc(k) => k.log_density(p, u),
            _ => {
                let z = scores(u)?;
                self.log_density_z(p, &z)
            }
        }
    }

    /// `log c(Φ(z))`.
    pub fn log_density_z(&self, p: &[f64], z: &[f64]) -> Result<f64> {
        match self {
            CopulaSpec::Independence { .. } => Ok(0.0),
            CopulaSpec::GvcFactor(g) => {
                let c = g.factors(p)?;
                g.log_c(p, &c, z)
            }
            CopulaSpec::GvcOrtho(g) => Ok(g.log_c(p, z)),
            CopulaSpec::Kvc(k) => {
                // scores from uniforms lose the upper tail; fine for testing
                let u: Vec<f64> = z.iter().map(|&v| normal_cdf(v).clamp(U_CLIP, 1.0 - U_CLIP)).collect();
                k.log_density(p, &u)
            }
            CopulaSpec::Nested { outer, refine, inner } => {
                let (po, pi) = self.split(p);
                let r = Self::nested_range(outer, *refine);
                let eps = inner.noise_inverse(pi, &z[r.clone()])?;
                let mut zo = z.to_vec();
                zo[r.clone()].copy_from_slice(&eps);
                Ok(outer.log_density_z(po, &zo)? + inner.log_density_z(pi, &z[r])?)
            }
        }
    }

    /// Dense correlation matrix of the scores for Gaussian families.
    pub fn dense_omega(&self, p: &[f64]) -> Option<DMatrix<f64>> {
        match self {
            CopulaSpec::Independence { dim } => Some(DMatrix::identity(*dim, *dim)),
            CopulaSpec::GvcFactor(g) => g.dense_omega(p).ok(),
            CopulaSpec::GvcOrtho(g) => Some(g.dense_omega(p)),
            _ => None,
        }
    }
}

/// `Φ⁻¹` from a probability and its complement, clipped to `±z_max`.
pub(crate) fn score_from_pair(p: f64, q: f64) -> (f64, bool) {
    if p < U_CLIP {
        (-z_max(), true)
    } else if q < U_CLIP {
        (z_max(), true)
    } else if p <= q {
        (quantile_unchecked(p), false)
    } else {
        (-quantile_unchecked(q), false)
    }
}

#[cfg(test)]
pub(crate) mod tests;
