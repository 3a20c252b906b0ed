//! Single-draw ELBO estimate and its reparameterized gradient.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::assembly::{Assembly, Noise};
use crate::copulas::{CopulaDraw, CopulaSpec};
use crate::error::{dimension, Result, VcviError};
use crate::kernels::normal::normal_log_pdf;
use crate::maps::{LPattern, MapEval, MapParams, MapSpec};
use crate::targets::Target;

/// Which gradient of the single-draw estimate to return.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Exact derivative of the estimate at fixed noise.
    Total,
    /// Drops the score terms of `log q`, whose expectation is zero.
    #[default]
    Path,
}

struct Forward {
    draw: CopulaDraw,
    maps: Vec<MapParams>,
    evals: Vec<MapEval>,
    theta: Vec<f64>,
}

impl Assembly {
    fn check_lambda(&self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.n_params() {
            return Err(dimension(format!("λ has length {}, assembly expects {}", lambda.len(), self.n_params())));
        }
        Ok(())
    }

    fn decode_maps(&self, lambda: &[f64]) -> Result<Vec<MapParams>> {
        let off = self.map_offsets();
        self.maps.iter().enumerate().map(|(j, m)| m.params(&lambda[off[j]..off[j + 1]])).collect()
    }

    fn forward(&self, lambda: &[f64], noise: &Noise) -> Result<Forward> {
        self.check_lambda(lambda)?;
        let pvc = &lambda[..self.n_copula_params()];
        let draw = self.copula.sample(pvc, &noise.normals, &noise.exps)?;
        let maps = self.decode_maps(lambda)?;
        let mut evals = Vec::with_capacity(maps.len());
        let mut theta = Vec::with_capacity(self.dim());
        for (j, m) in maps.iter().enumerate() {
            let ev = m.forward_z(&draw.z[self.partition.range(j)])?;
            theta.extend_from_slice(&ev.theta);
            evals.push(ev);
        }
        Ok(Forward { draw, maps, evals, theta })
    }

    /// `θ = g(ε, λ)`.
    pub fn sample_theta(&self, lambda: &[f64], noise: &Noise) -> Result<Vec<f64>> {
        Ok(self.forward(lambda, noise)?.theta)
    }

    /// `Σ_j [log|det ∂θ_j/∂z_j| − Σ log φ(z_j)] + copula term`, i.e. `−log q(θ)`.
    fn neg_log_q(&self, lambda: &[f64], f: &Forward) -> Result<f64> {
        let pvc = &lambda[..self.n_copula_params()];
        let mut v = self.copula.elbo_term(pvc, &f.draw)?;
        for (m, ev) in f.maps.iter().zip(&f.evals) {
            v += m.log_det_jac(ev)? - ev.z.iter().map(|&z| normal_log_pdf(z)).sum::<f64>();
        }
        Ok(v)
    }

    /// `log h(θ) − log q(θ)` at `θ = g(ε, λ)`; for the Kendall copula the
    /// expected log copula density replaces its per-draw value.
    pub fn elbo_estimate(&self, lambda: &[f64], target: &dyn Target, noise: &Noise) -> Result<f64> {
        let f = self.forward(lambda, noise)?;
        Ok(target.log_h(&f.theta) + self.neg_log_q(lambda, &f)?)
    }

    /// Whether the Hadamard-product gradient for GVC-I with diagonal M1
    /// marginals applies.
    pub fn fast_path_applies(&self) -> bool {
        let CopulaSpec::GvcOrtho(g) = &self.copula else { return false };
        g.identity
            && g.partition == self.partition
            && self
                .maps
                .iter()
                .all(|m| matches!(m, MapSpec::M1 { l: LPattern::Identity, warp: false, .. }))
    }

    /// Estimate and gradient with respect to the raw `λ`.
    pub fn elbo_gradient(&self, lambda: &[f64], target: &dyn Target, noise: &Noise, est: Estimator) -> Result<(f64, Vec<f64>)> {
        if est == Estimator::Path && self.fast_path_applies() {
            return self.fast_gradient(lambda, target, noise);
        }
        self.generic_gradient(lambda, target, noise, est)
    }

    pub fn generic_gradient(&self, lambda: &[f64], target: &dyn Target, noise: &Noise, est: Estimator) -> Result<(f64, Vec<f64>)> {
        let f = self.forward(lambda, noise)?;
        let (lh, gtheta) = target.log_h_grad(&f.theta);
        let value = lh + self.neg_log_q(lambda, &f)?;
        let nvc = self.n_copula_params();
        let pvc = &lambda[..nvc];
        let off = self.map_offsets();
        let mut grad = vec![0.0; lambda.len()];
        let mut zbar = vec![0.0; self.dim()];
        match est {
            Estimator::Total => {
                for (j, (m, ev)) in f.maps.iter().zip(&f.evals).enumerate() {
                    let r = self.partition.range(j);
                    let zb = m.backward(ev, &gtheta[r.clone()], 1.0, &mut grad[off[j]..off[j + 1]])?;
                    for (k, i) in r.enumerate() {
                        zbar[i] = zb[k] + ev.z[k];
                    }
                }
                let (gvc, _) = self.copula.total_backward(pvc, &f.draw, &zbar)?;
                grad[..nvc].copy_from_slice(&gvc);
            }
            Estimator::Path => {
                let score = self.copula.score_z(pvc, &f.draw)?;
                for (j, (m, ev)) in f.maps.iter().zip(&f.evals).enumerate() {
                    let r = self.partition.range(j);
                    let mut scratch = vec![0.0; off[j + 1] - off[j]];
                    let zb = m.backward(ev, &gtheta[r.clone()], 1.0, &mut scratch)?;
                    let zpath: Vec<f64> = r.clone().enumerate().map(|(k, i)| zb[k] + ev.z[k] - score[i]).collect();
                    let tbar = m.solve_jac_t(ev, &zpath)?;
                    let zb = m.backward(ev, &tbar, 0.0, &mut grad[off[j]..off[j + 1]])?;
                    zbar[r].copy_from_slice(&zb);
                }
                let (gvc, _) = self.copula.path_backward(pvc, &f.draw, &zbar)?;
                grad[..nvc].copy_from_slice(&gvc);
            }
        }
        Ok((value, grad))
    }

    /// Path gradient for GVC-I with `θ = b + s ∘ z`, using only elementwise
    /// products.
    fn fast_gradient(&self, lambda: &[f64], target: &dyn Target, noise: &Noise) -> Result<(f64, Vec<f64>)> {
        let CopulaSpec::GvcOrtho(g) = &self.copula else { unreachable!() };
        let nvc = self.n_copula_params();
        let l = g.unpack(&lambda[..nvc]).l;
        let draw = self.copula.sample(&lambda[..nvc], &noise.normals, &noise.exps)?;
        let z = &draw.z;
        let d = self.dim();
        let off = self.map_offsets();
        // b, s̃ and s per coordinate
        let mut b = vec![0.0; d];
        let mut st = vec![0.0; d];
        for j in 0..self.partition.n_blocks() {
            let r = self.partition.range(j);
            let n = r.len();
            b[r.clone()].copy_from_slice(&lambda[off[j]..off[j] + n]);
            st[r].copy_from_slice(&lambda[off[j] + n..off[j] + 2 * n]);
        }
        let s: Vec<f64> = st.iter().map(|v| v * v).collect();
        let theta: Vec<f64> = (0..d).map(|i| b[i] + s[i] * z[i]).collect();
        let (lh, gtheta) = target.log_h_grad(&theta);

        let m = l.len();
        let fol = self.partition.range(1).start;
        // Ω̃⁻¹ z
        let mut oz = z.clone();
        let mut quad = z.iter().map(|v| v * v).sum::<f64>();
        let mut logdet = 0.0;
        for i in 0..m {
            let (a, c, li) = (z[i], z[fol + i], l[i]);
            let om = 1.0 - li * li;
            oz[i] = (a - li * c) / om;
            oz[fol + i] = (c - li * a) / om;
            quad += (a * oz[i] + c * oz[fol + i]) - (a * a + c * c);
            logdet += om.ln();
        }
        let lphi: f64 = z.iter().map(|&v| normal_log_pdf(v)).sum();
        let log_c = -0.5 * logdet - 0.5 * quad + 0.5 * z.iter().map(|v| v * v).sum::<f64>();
        let log_s: f64 = s.iter().map(|v| v.ln()).sum();
        let value = lh - log_c - lphi + log_s;

        let tbar: Vec<f64> = (0..d).map(|i| gtheta[i] + oz[i] / s[i]).collect();
        let mut grad = vec![0.0; lambda.len()];
        for j in 0..self.partition.n_blocks() {
            let r = self.partition.range(j);
            let n = r.len();
            for (k, i) in r.enumerate() {
                grad[off[j] + k] = tbar[i];
                grad[off[j] + n + k] = 2.0 * st[i] * z[i] * tbar[i];
            }
        }
        for i in 0..m {
            if draw.clipped[fol + i] {
                continue;
            }
            let li = l[i];
            let sq = (1.0 - li * li).sqrt();
            let dz = noise.normals[i] - li / sq * noise.normals[fol + i];
            grad[i] = 0.5 * (1.0 - li * li) * dz * s[fol + i] * tbar[fol + i];
        }
        Ok((value, grad))
    }

    /// `log q(θ)` of the variational density.
    pub fn log_density(&self, lambda: &[f64], theta: &[f64]) -> Result<f64> {
        self.check_lambda(lambda)?;
        if theta.len() != self.dim() {
            return Err(dimension(format!("θ has length {}, expected {}", theta.len(), self.dim())));
        }
        let maps = self.decode_maps(lambda)?;
        let mut z = Vec::with_capacity(self.dim());
        let mut lq = 0.0;
        for (j, m) in maps.iter().enumerate() {
            let zj = m.inverse_z(&theta[self.partition.range(j)])?;
            let ev = m.forward_z(&zj)?;
            lq += zj.iter().map(|&v| normal_log_pdf(v)).sum::<f64>() - m.log_det_jac(&ev)?;
            z.extend(zj);
        }
        Ok(lq + self.copula.log_density_z(&lambda[..self.n_copula_params()], &z)?)
    }

    /// Mean and covariance when the approximation is exactly Gaussian
    /// (Gaussian or independence copula, no warps).
    pub fn gaussian_form(&self, lambda: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.check_lambda(lambda)?;
        let unsupported = || VcviError::Spec(format!("{} is not a Gaussian approximation", self.name));
        let omega = self.copula.dense_omega(&lambda[..self.n_copula_params()]).ok_or_else(unsupported)?;
        let d = self.dim();
        let mut a = DMatrix::zeros(d, d);
        let mut mean = Vec::with_capacity(d);
        for (j, m) in self.decode_maps(lambda)?.iter().enumerate() {
            let r = self.partition.range(j);
            let blk = match m {
                MapParams::M1(p) => {
                    if p.eta.is_some() {
                        return Err(unsupported());
                    }
                    let l = p.l.to_dense();
                    let l = if p.l_inverse { l.try_inverse().ok_or_else(unsupported)? } else { l };
                    mean.extend_from_slice(&p.b);
                    DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&p.s)) * l
                }
                MapParams::M2(p) => {
                    if p.eta.is_some() {
                        return Err(unsupported());
                    }
                    mean.extend_from_slice(&p.b);
                    p.scale.to_dense()
                }
            };
            a.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(&blk);
        }
        Ok((mean, &a * omega * a.transpose()))
    }
}
