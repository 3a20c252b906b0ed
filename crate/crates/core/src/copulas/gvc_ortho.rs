//! Gaussian vector copula with orthogonal pattern, coupling the first two
//! blocks: `Cov(z_lead, z_follow) = Q₁ Λ Q₂ᵀ`, `Λ = diag(l)`.
//!
//! The larger of the two blocks leads (the first on ties); its scores are the
//! noise itself. Any further blocks are independent of everything else. In
//! identity mode `Q₁ = Q₂ = I` and both blocks must have the same size.
//!
//! Raw parameters: `[Q₁ (d_lead × d̃), Q₂ (d̃ × d̃), l̃ (d̃)]`, or only `[l̃]` in
//! identity mode, with `l = 2σ(l̃) − 1`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{clip_scores, mask, BlockPartition, CopulaDraw, DrawCache};
use crate::error::{spec, Result};
use crate::kernels::stiefel::retract_qr;
use crate::layout::{IndexMap, Transform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GvcOrtho {
    pub partition: BlockPartition,
    pub identity: bool,
}

#[derive(Debug, Clone)]
pub struct Cache {
    /// `Q₁ᵀ ε_lead`
    a: Vec<f64>,
    /// `l ∘ a + √(1 − l²) ∘ ε_follow`
    t: Vec<f64>,
}

/// Unpacked parameters.
pub(crate) struct Ortho {
    pub q1: Option<DMatrix<f64>>,
    pub q2: Option<DMatrix<f64>>,
    pub l: Vec<f64>,
}

impl Ortho {
    fn q1t(&self, x: &[f64]) -> Vec<f64> {
        match &self.q1 {
            Some(q) => q.tr_mul(&DVector::from_column_slice(x)).as_slice().to_vec(),
            None => x.to_vec(),
        }
    }

    fn q1(&self, x: &[f64]) -> Vec<f64> {
        match &self.q1 {
            Some(q) => (q * DVector::from_column_slice(x)).as_slice().to_vec(),
            None => x.to_vec(),
        }
    }

    fn q2t(&self, x: &[f64]) -> Vec<f64> {
        match &self.q2 {
            Some(q) => q.tr_mul(&DVector::from_column_slice(x)).as_slice().to_vec(),
            None => x.to_vec(),
        }
    }

    fn q2(&self, x: &[f64]) -> Vec<f64> {
        match &self.q2 {
            Some(q) => (q * DVector::from_column_slice(x)).as_slice().to_vec(),
            None => x.to_vec(),
        }
    }
}

fn outer(a: &[f64], b: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| a[i] * b[j])
}

impl GvcOrtho {
    pub fn new(partition: BlockPartition, identity: bool) -> Result<Self> {
        let g = GvcOrtho { partition, identity };
        g.validate()?;
        Ok(g)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let s = self.partition.sizes();
        if s.len() < 2 {
            return Err(spec("GVC-O and GVC-I need at least two blocks"));
        }
        if self.identity && s[0] != s[1] {
            return Err(spec(format!("GVC-I couples blocks of equal size, got {} and {}", s[0], s[1])));
        }
        Ok(())
    }

    /// `(lead range, follow range, d̃)`.
    pub(crate) fn roles(&self) -> (Range<usize>, Range<usize>, usize) {
        let s = self.partition.sizes();
        let (r0, r1) = (self.partition.range(0), self.partition.range(1));
        if s[1] > s[0] {
            (r1, r0, s[0])
        } else {
            (r0, r1, s[1])
        }
    }

    pub fn index_map(&self) -> IndexMap {
        let (lead, _, dt) = self.roles();
        let mut m = IndexMap::default();
        if !self.identity {
            m.push("Q1", lead.len() * dt, Transform::Stiefel { rows: lead.len(), cols: dt });
            m.push("Q2", dt * dt, Transform::Stiefel { rows: dt, cols: dt });
        }
        m.push("l", dt, Transform::SignedSigmoid);
        m
    }

    pub(crate) fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let (lead, _, dt) = self.roles();
        let mut p = Vec::new();
        if !self.identity {
            for rows in [lead.len(), dt] {
                let mut q = DMatrix::from_fn(rows, dt, |_, _| rng.sample::<f64, _>(StandardNormal));
                retract_qr(&mut q);
                p.extend(q.iter());
            }
        }
        p.extend(std::iter::repeat(0.0).take(dt));
        p
    }

    pub(crate) fn unpack(&self, p: &[f64]) -> Ortho {
        let (lead, _, dt) = self.roles();
        let (q1, q2, rest) = if self.identity {
            (None, None, p)
        } else {
            let n1 = lead.len() * dt;
            let q1 = DMatrix::from_column_slice(lead.len(), dt, &p[..n1]);
            let q2 = DMatrix::from_column_slice(dt, dt, &p[n1..n1 + dt * dt]);
            (Some(q1), Some(q2), &p[n1 + dt * dt..])
        };
        let l = rest.iter().map(|&r| 2.0 / (1.0 + (-r).exp()) - 1.0).collect();
        Ortho { q1, q2, l }
    }

    fn l_offset(&self) -> usize {
        let (lead, _, dt) = self.roles();
        if self.identity {
            0
        } else {
            lead.len() * dt + dt * dt
        }
    }

    pub(crate) fn sample(&self, p: &[f64], normals: &[f64]) -> Result<CopulaDraw> {
        let o = self.unpack(p);
        let (lead, fol, _) = self.roles();
        let a = o.q1t(&normals[lead.clone()]);
        let t: Vec<f64> = (0..a.len())
            .map(|i| o.l[i] * a[i] + (1.0 - o.l[i] * o.l[i]).sqrt() * normals[fol.start + i])
            .collect();
        let mut z_raw = normals.to_vec();
        z_raw[fol].copy_from_slice(&o.q2(&t));
        let (z, clipped) = clip_scores(&z_raw);
        Ok(CopulaDraw { z, clipped, normals: normals.to_vec(), exps: Vec::new(), cache: DrawCache::GvcOrtho(Cache { a, t }) })
    }

    pub(crate) fn log_c(&self, p: &[f64], z: &[f64]) -> f64 {
        let o = self.unpack(p);
        let (lead, fol, _) = self.roles();
        let a = o.q1t(&z[lead]);
        let b = o.q2t(&z[fol]);
        (0..a.len())
            .map(|i| {
                let l = o.l[i];
                let om = 1.0 - l * l;
                -0.5 * om.ln() - 0.5 * (l * l * (a[i] * a[i] + b[i] * b[i]) - 2.0 * l * a[i] * b[i]) / om
            })
            .sum()
    }

    /// Gradient of `log c` at fixed `z`: `(∇_z, ∇_raw)`.
    pub(crate) fn log_c_grad(&self, p: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let o = self.unpack(p);
        let (lead, fol, dt) = self.roles();
        let a = o.q1t(&z[lead.clone()]);
        let b = o.q2t(&z[fol.clone()]);
        let mut abar = vec![0.0; dt];
        let mut bbar = vec![0.0; dt];
        let mut grad = vec![0.0; p.len()];
        let lo = self.l_offset();
        for i in 0..dt {
            let l = o.l[i];
            let om = 1.0 - l * l;
            abar[i] = -l * (l * a[i] - b[i]) / om;
            bbar[i] = -l * (l * b[i] - a[i]) / om;
            let s = a[i] * a[i] + b[i] * b[i];
            let lbar = l / om - (l * s - a[i] * b[i] * (1.0 + l * l)) / (om * om);
            grad[lo + i] = lbar * 0.5 * om;
        }
        let mut gz = vec![0.0; z.len()];
        gz[lead.clone()].copy_from_slice(&o.q1(&abar));
        gz[fol.clone()].copy_from_slice(&o.q2(&bbar));
        if !self.identity {
            let n1 = lead.len() * dt;
            grad[..n1].copy_from_slice(outer(&z[lead], &abar).as_slice());
            grad[n1..n1 + dt * dt].copy_from_slice(outer(&z[fol], &bbar).as_slice());
        }
        (gz, grad)
    }

    pub(crate) fn sample_vjp(&self, p: &[f64], c: &Cache, draw: &CopulaDraw, zbar: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let o = self.unpack(p);
        let (lead, fol, dt) = self.roles();
        let zbar = mask(zbar, &draw.clipped);
        let eps = &draw.normals;
        let tbar = o.q2t(&zbar[fol.clone()]);
        let mut grad = vec![0.0; p.len()];
        let lo = self.l_offset();
        let mut abar = vec![0.0; dt];
        let mut ebar = zbar.clone();
        for i in 0..dt {
            let l = o.l[i];
            let s = (1.0 - l * l).sqrt();
            let ef = eps[fol.start + i];
            let lbar = tbar[i] * (c.a[i] - l * ef / s);
            grad[lo + i] = lbar * 0.5 * (1.0 - l * l);
            abar[i] = tbar[i] * l;
            ebar[fol.start + i] = tbar[i] * s;
        }
        let back = o.q1(&abar);
        for (k, i) in lead.clone().enumerate() {
            ebar[i] += back[k];
        }
        if !self.identity {
            let n1 = lead.len() * dt;
            grad[..n1].copy_from_slice(outer(&eps[lead], &abar).as_slice());
            grad[n1..n1 + dt * dt].copy_from_slice(outer(&zbar[fol], &c.t).as_slice());
        }
        (grad, ebar)
    }

    pub(crate) fn total_backward(&self, p: &[f64], c: &Cache, draw: &CopulaDraw, zbar: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (gz, gp) = self.log_c_grad(p, &draw.z);
        let zb: Vec<f64> = zbar.iter().zip(&gz).map(|(a, b)| a - b).collect();
        let (mut grad, ebar) = self.sample_vjp(p, c, draw, &zb);
        for (g, e) in grad.iter_mut().zip(&gp) {
            *g -= e;
        }
        Ok((grad, ebar))
    }

    /// Solves `[∂z/∂ε]ᵀ x = y`.
    pub(crate) fn noise_solve_t(&self, p: &[f64], y: &[f64]) -> Vec<f64> {
        let o = self.unpack(p);
        let (lead, fol, dt) = self.roles();
        let mut x = y.to_vec();
        let yf: Vec<f64> = (0..dt).map(|i| y[fol.start + i] / (1.0 - o.l[i] * o.l[i]).sqrt()).collect();
        x[fol].copy_from_slice(&o.q2(&yf));
        let ly: Vec<f64> = (0..dt).map(|i| o.l[i] * yf[i]).collect();
        let back = o.q1(&ly);
        for (k, i) in lead.enumerate() {
            x[i] -= back[k];
        }
        x
    }

    /// Noise that reproduces scores `z`.
    pub(crate) fn noise_inverse(&self, p: &[f64], z: &[f64]) -> Vec<f64> {
        let o = self.unpack(p);
        let (lead, fol, dt) = self.roles();
        let a = o.q1t(&z[lead]);
        let b = o.q2t(&z[fol.clone()]);
        let mut e = z.to_vec();
        for i in 0..dt {
            e[fol.start + i] = (b[i] - o.l[i] * a[i]) / (1.0 - o.l[i] * o.l[i]).sqrt();
        }
        e
    }

    fn q_dense(o: &Ortho, lead: usize, dt: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let q1 = o.q1.clone().unwrap_or_else(|| DMatrix::identity(lead, dt));
        let q2 = o.q2.clone().unwrap_or_else(|| DMatrix::identity(dt, dt));
        (q1, q2)
    }

    /// Dense correlation matrix of the scores.
    pub fn dense_omega(&self, p: &[f64]) -> DMatrix<f64> {
        let o = self.unpack(p);
        let (lead, fol, dt) = self.roles();
        let d = self.partition.total();
        let (q1, q2) = Self::q_dense(&o, lead.len(), dt);
        let off = &q1 * DMatrix::from_diagonal(&DVector::from_vec(o.l.clone())) * q2.transpose();
        let mut om = DMatrix::identity(d, d);
        om.view_mut((lead.start, fol.start), (lead.len(), fol.len())).copy_from(&off);
        om.view_mut((fol.start, lead.start), (fol.len(), lead.len())).copy_from(&off.transpose());
        om
    }

    /// Closed-form `Ω⁻¹` from the block inverse formula.
    pub fn dense_omega_inverse(&self, p: &[f64]) -> DMatrix<f64> {
        let o = self.unpack(p);
        let (lead, fol, dt) = self.roles();
        let d = self.partition.total();
        let (q1, q2) = Self::q_dense(&o, lead.len(), dt);
        let diag = |f: &dyn Fn(f64) -> f64| DMatrix::from_diagonal(&DVector::from_iterator(dt, o.l.iter().map(|&l| f(l))));
        let tl = DMatrix::identity(lead.len(), lead.len()) + &q1 * diag(&|l| l * l / (1.0 - l * l)) * q1.transpose();
        let off = -(&q1 * diag(&|l| l / (1.0 - l * l)) * q2.transpose());
        let br = &q2 * diag(&|l| 1.0 / (1.0 - l * l)) * q2.transpose();
        let mut inv = DMatrix::identity(d, d);
        inv.view_mut((lead.start, lead.start), (lead.len(), lead.len())).copy_from(&tl);
        inv.view_mut((lead.start, fol.start), (lead.len(), fol.len())).copy_from(&off);
        inv.view_mut((fol.start, lead.start), (fol.len(), lead.len())).copy_from(&off.transpose());
        inv.view_mut((fol.start, fol.start), (fol.len(), fol.len())).copy_from(&br);
        inv
    }

    /// `log det Ω = Σ log(1 − l_i²)`.
    pub fn log_det_omega(&self, p: &[f64]) -> f64 {
        self.unpack(p).l.iter().map(|l| (1.0 - l * l).ln()).sum()
    }
}
