//! Gaussian vector copula with factor pattern: `Ω̃ = ζI + BBᵀ` rescaled so its
//! diagonal blocks are identities.
//!
//! Raw parameters are `[ζ̃, B]` with `ζ = ζ̃²` and `B` stored column-major.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{clip_scores, mask, BlockPartition, CopulaDraw, DrawCache};
use crate::error::{spec, Result, VcviError};
use crate::kernels::lowrank::{cholesky_rank1_dense, cholesky_vjp};
use crate::layout::{IndexMap, Transform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GvcFactor {
    pub partition: BlockPartition,
    pub rank: usize,
}

/// Per-parameter-value factors plus the draw's intermediates.
#[derive(Debug, Clone)]
pub struct Cache {
    zeta: f64,
    b: DMatrix<f64>,
    /// Lower Cholesky factor `C_j` of `ζI + B_jB_jᵀ` for each block.
    chol: Vec<DMatrix<f64>>,
    w: Vec<f64>,
    z_raw: Vec<f64>,
}

impl GvcFactor {
    pub fn new(partition: BlockPartition, rank: usize) -> Result<Self> {
        let g = GvcFactor { partition, rank };
        g.validate()?;
        Ok(g)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let d = self.partition.total();
        if self.rank == 0 || self.rank >= d {
            return Err(spec(format!("GVC-F rank must satisfy 0 < p < d = {d}, got {}", self.rank)));
        }
        Ok(())
    }

    pub fn index_map(&self) -> IndexMap {
        let mut m = IndexMap::default();
        m.push("zeta", 1, Transform::Square);
        m.push("B", self.partition.total() * self.rank, Transform::Identity);
        m
    }

    pub(crate) fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = vec![1.0];
        for _ in 0..self.partition.total() * self.rank {
            p.push(0.01 * rng.sample::<f64, _>(StandardNormal));
        }
        p
    }

    fn unpack(&self, p: &[f64]) -> Result<(f64, DMatrix<f64>)> {
        let zeta = p[0] * p[0];
        if !(zeta > 0.0) || !zeta.is_finite() {
            return Err(VcviError::Numerical(format!("GVC-F requires ζ > 0, got {zeta}")));
        }
        let d = self.partition.total();
        Ok((zeta, DMatrix::from_column_slice(d, self.rank, &p[1..])))
    }

    fn block_rows(&self, b: &DMatrix<f64>, j: usize) -> DMatrix<f64> {
        let r = self.partition.range(j);
        b.rows(r.start, r.len()).into_owned()
    }

    /// Factors that depend only on the parameters.
    pub(crate) fn factors(&self, p: &[f64]) -> Result<Cache> {
        let (zeta, b) = self.unpack(p)?;
        let chol = (0..self.partition.n_blocks())
            .map(|j| cholesky_rank1_dense(zeta, &self.block_rows(&b, j)))
            .collect();
        Ok(Cache { zeta, b, chol, w: Vec::new(), z_raw: Vec::new() })
    }

    pub(crate) fn sample(&self, p: &[f64], normals: &[f64]) -> Result<CopulaDraw> {
        let mut c = self.factors(p)?;
        let d = self.partition.total();
        let e2 = DVector::from_column_slice(&normals[d..]);
        let be = &c.b * e2;
        let w: Vec<f64> = (0..d).map(|i| p[0] * normals[i] + be[i]).collect();
        let mut z_raw = vec![0.0; d];
        for (j, cj) in c.chol.iter().enumerate() {
            let r = self.partition.range(j);
            let x = cj
                .solve_lower_triangular(&DVector::from_column_slice(&w[r.clone()]))
                .ok_or_else(|| VcviError::Numerical("singular block factor".into()))?;
            z_raw[r].copy_from_slice(x.as_slice());
        }
        let (z, clipped) = clip_scores(&z_raw);
        c.w = w;
        c.z_raw = z_raw;
        Ok(CopulaDraw { z, clipped, normals: normals.to_vec(), exps: Vec::new(), cache: DrawCache::GvcFactor(c) })
    }

    /// `v = Cz` blockwise.
    fn whiten(&self, c: &Cache, z: &[f64]) -> DVector<f64> {
        let mut v = DVector::zeros(z.len());
        for (j, cj) in c.chol.iter().enumerate() {
            let r = self.partition.range(j);
            let x = cj * DVector::from_column_slice(&z[r.clone()]);
            v.rows_mut(r.start, r.len()).copy_from(&x);
        }
        v
    }

    /// `K = ζI_p + BᵀB` and its Cholesky factor.
    fn small_chol(zeta: f64, b: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let k = b.tr_mul(b) + DMatrix::identity(b.ncols(), b.ncols()) * zeta;
        k.cholesky().ok_or_else(|| VcviError::Numerical("ζI + BᵀB is not positive definite".into()))
    }

    /// `Ω̃⁻¹ v` via Woodbury.
    fn inv_apply(zeta: f64, b: &DMatrix<f64>, kc: &nalgebra::Cholesky<f64, nalgebra::Dyn>, v: &DVector<f64>) -> DVector<f64> {
        let t = kc.solve(&b.tr_mul(v));
        (v - b * t) / zeta
    }

    fn log_det_omega(&self, c: &Cache) -> Result<(f64, nalgebra::Cholesky<f64, nalgebra::Dyn>)> {
        let m = self.partition.n_blocks() as f64;
        let p = self.rank as f64;
        let kc = Self::small_chol(c.zeta, &c.b)?;
        let mut ld = (m - 1.0) * p * c.zeta.ln() + 2.0 * kc.l().diagonal().map(f64::ln).sum();
        for j in 0..self.partition.n_blocks() {
            let kj = Self::small_chol(c.zeta, &self.block_rows(&c.b, j))?;
            ld -= 2.0 * kj.l().diagonal().map(f64::ln).sum();
        }
        Ok((ld, kc))
    }

    pub(crate) fn log_c(&self, _p: &[f64], c: &Cache, z: &[f64]) -> Result<f64> {
        let (ld, kc) = self.log_det_omega(c)?;
        let v = self.whiten(c, z);
        let g = Self::inv_apply(c.zeta, &c.b, &kc, &v);
        let zz: f64 = z.iter().map(|x| x * x).sum();
        Ok(-0.5 * ld - 0.5 * v.dot(&g) + 0.5 * zz)
    }

    /// Gradient of `log c` at fixed `z`: `(∇_z, ∇_raw)`.
    pub(crate) fn log_c_grad(&self, p: &[f64], c: &Cache, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.partition.total();
        let (_, kc) = self.log_det_omega(c)?;
        let v = self.whiten(c, z);
        let g = Self::inv_apply(c.zeta, &c.b, &kc, &v);
        let mut gz = z.to_vec();
        let mut zeta_bar = 0.0;
        let mut b_bar = DMatrix::zeros(d, self.rank);

        // quadratic term through Ω̃
        zeta_bar += 0.5 * g.dot(&g);
        b_bar += (&g * (g.transpose() * &c.b)) * 1.0;

        // quadratic term through C_j, and log det of the block terms
        for (j, cj) in c.chol.iter().enumerate() {
            let r = self.partition.range(j);
            let gj = g.rows(r.start, r.len());
            let zj = DVector::from_column_slice(&z[r.clone()]);
            let ctg = cj.tr_mul(&gj);
            for (k, i) in r.clone().enumerate() {
                gz[i] -= ctg[k];
            }
            let cbar = -(&gj * zj.transpose());
            let abar = cholesky_vjp(cj, &cbar);
            let bj = self.block_rows(&c.b, j);
            zeta_bar += abar.trace();
            let mut rows = b_bar.rows_mut(r.start, r.len());
            rows += &abar * &bj * 2.0;

            let kj = Self::small_chol(c.zeta, &bj)?;
            let kinv = kj.inverse();
            zeta_bar += 0.5 * kinv.trace();
            rows += &bj * &kinv;
        }
        let kinv = kc.inverse();
        zeta_bar -= 0.5 * ((self.partition.n_blocks() - 1) as f64 * self.rank as f64 / c.zeta + kinv.trace());
        b_bar -= &c.b * &kinv;

        let mut grad = Vec::with_capacity(1 + d * self.rank);
        grad.push(2.0 * p[0] * zeta_bar);
        grad.extend(b_bar.iter());
        Ok((gz, grad))
    }

    /// Pulls `z̄` back through the sampling path. Returns the raw-parameter
    /// gradient and the noise cotangent.
    pub(crate) fn sample_vjp(&self, p: &[f64], c: &Cache, draw: &CopulaDraw, zbar: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.partition.total();
        let zbar = mask(zbar, &draw.clipped);
        let mut wbar = vec![0.0; d];
        let mut zeta_bar = 0.0;
        let mut b_bar = DMatrix::zeros(d, self.rank);
        for (j, cj) in c.chol.iter().enumerate() {
            let r = self.partition.range(j);
            let zb = DVector::from_column_slice(&zbar[r.clone()]);
            let wb = cj
                .tr_solve_lower_triangular(&zb)
                .ok_or_else(|| VcviError::Numerical("singular block factor".into()))?;
            let zj = DVector::from_column_slice(&c.z_raw[r.clone()]);
            let cbar = -(&wb * zj.transpose());
            let abar = cholesky_vjp(cj, &cbar);
            zeta_bar += abar.trace();
            let bj = self.block_rows(&c.b, j);
            let mut rows = b_bar.rows_mut(r.start, r.len());
            rows += &abar * &bj * 2.0;
            wbar[r].copy_from_slice(wb.as_slice());
        }
        let e1 = &draw.normals[..d];
        let e2 = DVector::from_column_slice(&draw.normals[d..]);
        let wb = DVector::from_column_slice(&wbar);
        b_bar += &wb * e2.transpose();
        let zt_bar = 2.0 * p[0] * zeta_bar + wb.iter().zip(e1).map(|(a, b)| a * b).sum::<f64>();

        let mut grad = Vec::with_capacity(1 + d * self.rank);
        grad.push(zt_bar);
        grad.extend(b_bar.iter());
        let mut ebar: Vec<f64> = wbar.iter().map(|v| p[0] * v).collect();
        ebar.extend(c.b.tr_mul(&wb).iter());
        Ok((grad, ebar))
    }

    pub(crate) fn total_backward(&self, p: &[f64], c: &Cache, draw: &CopulaDraw, zbar: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (gz, gp) = self.log_c_grad(p, c, &draw.z)?;
        let zb: Vec<f64> = zbar.iter().zip(&gz).map(|(a, b)| a - b).collect();
        let (mut grad, ebar) = self.sample_vjp(p, c, draw, &zb)?;
        for (g, e) in grad.iter_mut().zip(&gp) {
            *g -= e;
        }
        Ok((grad, ebar))
    }

    /// Dense `Ω = C⁻¹ Ω̃ C⁻ᵀ`.
    pub fn dense_omega(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let c = self.factors(p)?;
        let d = self.partition.total();
        let omt = &c.b * c.b.transpose() + DMatrix::identity(d, d) * c.zeta;
        let mut cinv = DMatrix::zeros(d, d);
        for (j, cj) in c.chol.iter().enumerate() {
            let r = self.partition.range(j);
            let inv = cj.clone().try_inverse().ok_or_else(|| VcviError::Numerical("singular block factor".into()))?;
            cinv.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(&inv);
        }
        Ok(&cinv * omt * cinv.transpose())
    }
}
