//! Kendall vector copula: independence copulas within blocks, nested under a
//! Gaussian copula with correlation `Ω₀ = G̃G̃ᵀ` acting on the blocks' Kendall
//! transforms.
//!
//! Raw parameters are the lower triangle of `G` packed column by column, the
//! diagonal entry first in each column and stored as its square root.
//! `G̃ = diag(GGᵀ)^{-1/2} G`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{mask, score_from_pair, BlockPartition, CopulaDraw, DrawCache};
use crate::error::{Result, VcviError};
use crate::kernels::erlang::{erlang_cdf_sf, erlang_ln_pdf, erlang_quantile_pair};
use crate::kernels::normal::{normal_cdf, normal_log_pdf};
use crate::layout::{IndexMap, Transform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kvc {
    pub partition: BlockPartition,
}

#[derive(Debug, Clone)]
pub struct Cache {
    g: DMatrix<f64>,
    gt: DMatrix<f64>,
    norms: Vec<f64>,
    kappa: Vec<f64>,
    r: Vec<f64>,
    /// `x = r_j s` per coordinate.
    x: Vec<f64>,
    s: Vec<f64>,
}

impl Kvc {
    pub fn new(partition: BlockPartition) -> Self {
        Kvc { partition }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        Ok(())
    }

    fn m(&self) -> usize {
        self.partition.n_blocks()
    }

    pub fn index_map(&self) -> IndexMap {
        let m = self.m();
        let mut im = IndexMap::default();
        im.push("G", m * (m + 1) / 2, Transform::SquaredDiagonal);
        im
    }

    /// `G = I`.
    pub(crate) fn init(&self) -> Vec<f64> {
        let m = self.m();
        let mut p = Vec::with_capacity(m * (m + 1) / 2);
        for j in 0..m {
            p.push(1.0);
            p.extend(std::iter::repeat(0.0).take(m - j - 1));
        }
        p
    }

    /// `G`, `G̃` and the row norms of `G`.
    pub fn factors(&self, p: &[f64]) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
        let m = self.m();
        let mut g = DMatrix::zeros(m, m);
        let mut k = 0;
        for j in 0..m {
            for i in j..m {
                g[(i, j)] = if i == j { p[k] * p[k] } else { p[k] };
                k += 1;
            }
        }
        let norms: Vec<f64> = (0..m).map(|i| g.row(i).norm()).collect();
        let mut gt = g.clone();
        for i in 0..m {
            gt.row_mut(i).scale_mut(1.0 / norms[i]);
        }
        (g, gt, norms)
    }

    pub(crate) fn sample(&self, p: &[f64], normals: &[f64], exps: &[f64]) -> Result<CopulaDraw> {
        let d = self.partition.total();
        let (g, gt, norms) = self.factors(p);
        if norms.iter().any(|&n| !(n > 0.0) || !n.is_finite()) || (0..self.m()).any(|j| g[(j, j)] == 0.0) {
            return Err(VcviError::Numerical("KVC-G requires a nonsingular G".into()));
        }
        let kappa = &gt * DVector::from_column_slice(normals);
        let mut r = Vec::with_capacity(self.m());
        let mut x = vec![0.0; d];
        let mut s = vec![0.0; d];
        let mut z = vec![0.0; d];
        let mut clipped = vec![false; d];
        for j in 0..self.m() {
            let range = self.partition.range(j);
            let k = kappa[j];
            let rj = erlang_quantile_pair(normal_cdf(-k), normal_cdf(k), range.len());
            r.push(rj);
            let total: f64 = exps[range.clone()].iter().sum();
            for i in range {
                s[i] = exps[i] / total;
                x[i] = rj * s[i];
                (z[i], clipped[i]) = score_from_pair((-x[i]).exp(), -(-x[i]).exp_m1());
            }
        }
        let cache = Cache { g, gt, norms, kappa: kappa.as_slice().to_vec(), r, x, s };
        Ok(CopulaDraw { z, clipped, normals: normals.to_vec(), exps: exps.to_vec(), cache: DrawCache::Kvc(cache) })
    }

    /// Pulls `z̄` back through the sampling path.
    pub(crate) fn sample_vjp(&self, p: &[f64], c: &Cache, draw: &CopulaDraw, zbar: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.m();
        let zbar = mask(zbar, &draw.clipped);
        let mut kbar = DVector::zeros(m);
        for j in 0..m {
            let range = self.partition.range(j);
            let mut rbar = 0.0;
            for i in range.clone() {
                if zbar[i] != 0.0 {
                    // dz/dx = −u / φ(z)
                    let dzdx = -(-c.x[i] - normal_log_pdf(draw.z[i])).exp();
                    rbar += zbar[i] * dzdx * c.s[i];
                }
            }
            if rbar != 0.0 {
                let k = c.kappa[j];
                kbar[j] = -rbar * (normal_log_pdf(k) - erlang_ln_pdf(c.r[j], range.len())).exp();
            }
        }
        let eps = DVector::from_column_slice(&draw.normals);
        let gt_bar = (&kbar * eps.transpose()).lower_triangle();
        let ebar = c.gt.tr_mul(&kbar);
        let g_bar = self.row_normalize_vjp(c, &gt_bar);
        (self.pack_grad(p, &g_bar), ebar.as_slice().to_vec())
    }

    fn row_normalize_vjp(&self, c: &Cache, gt_bar: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.m();
        let mut g_bar = DMatrix::zeros(m, m);
        for i in 0..m {
            let n = c.norms[i];
            let dot: f64 = (0..=i).map(|k| gt_bar[(i, k)] * c.g[(i, k)]).sum();
            for k in 0..=i {
                g_bar[(i, k)] = gt_bar[(i, k)] / n - c.g[(i, k)] * dot / (n * n * n);
            }
        }
        g_bar
    }

    fn pack_grad(&self, p: &[f64], g_bar: &DMatrix<f64>) -> Vec<f64> {
        let m = self.m();
        let mut out = Vec::with_capacity(p.len());
        let mut k = 0;
        for j in 0..m {
            for i in j..m {
                out.push(if i == j { 2.0 * p[k] * g_bar[(i, j)] } else { g_bar[(i, j)] });
                k += 1;
            }
        }
        out
    }

    /// `log|G̃| = Σ log G̃_jj`, equal to `−E[log c]`.
    pub fn entropy_term(&self, p: &[f64]) -> f64 {
        let (g, _, norms) = self.factors(p);
        (0..self.m()).map(|j| g[(j, j)].ln() - norms[j].ln()).sum()
    }

    /// Adds `∇ log|G̃|` to a raw-parameter gradient.
    pub(crate) fn entropy_grad(&self, p: &[f64], grad: &mut [f64]) {
        let m = self.m();
        let (g, _, norms) = self.factors(p);
        let mut gb = DMatrix::zeros(m, m);
        for i in 0..m {
            for k in 0..=i {
                gb[(i, k)] = -g[(i, k)] / (norms[i] * norms[i]);
            }
            gb[(i, i)] += 1.0 / g[(i, i)];
        }
        for (a, b) in grad.iter_mut().zip(self.pack_grad(p, &gb)) {
            *a += b;
        }
    }

    /// `log c(u)` evaluated through the Kendall transforms of the blocks.
    pub(crate) fn log_density(&self, p: &[f64], u: &[f64]) -> Result<f64> {
        if let Some(&bad) = u.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
            return Err(crate::error::domain(format!("uniform input must lie in (0, 1), got {bad}")));
        }
        let (g, gt, norms) = self.factors(p);
        let m = self.m();
        let mut kappa = DVector::zeros(m);
        for j in 0..m {
            let range = self.partition.range(j);
            let x: f64 = u[range.clone()].iter().map(|v| -v.ln()).sum();
            let (f, sf) = erlang_cdf_sf(x, range.len());
            kappa[j] = score_from_pair(sf, f).0;
        }
        let w = gt
            .solve_lower_triangular(&kappa)
            .ok_or_else(|| VcviError::Numerical("singular G".into()))?;
        let ld: f64 = (0..m).map(|j| g[(j, j)].ln() - norms[j].ln()).sum();
        Ok(-ld - 0.5 * w.norm_squared() + 0.5 * kappa.norm_squared())
    }
}
