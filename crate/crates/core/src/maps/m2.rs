use nalgebra::{DMatrix, DVector};

use super::yj::{eta_from_raw, yj_eval, yj_forward};
use super::MapEval;
use crate::error::Result;
use crate::kernels::FactorScale;

/// `θ = b + k_η(E z)` with `E = J Jᵀ + D²`.
#[derive(Debug, Clone)]
pub struct M2Params {
    pub b: Vec<f64>,
    pub scale: FactorScale,
    pub eta: Option<Vec<f64>>,
    deta_raw: Vec<f64>,
}

impl M2Params {
    pub(crate) fn from_raw(d: usize, w: usize, warp: bool, raw: &[f64]) -> Result<Self> {
        let b = raw[..d].to_vec();
        let j = DMatrix::from_column_slice(d, w, &raw[d..d + d * w]);
        let diag = DVector::from_column_slice(&raw[d + d * w..2 * d + d * w]);
        let scale = FactorScale::new(j, diag)?;
        let (eta, deta_raw) = if warp {
            let (e, de): (Vec<f64>, Vec<f64>) = raw[2 * d + d * w..].iter().map(|&r| eta_from_raw(r)).unzip();
            (Some(e), de)
        } else {
            (None, Vec::new())
        };
        Ok(M2Params { b, scale, eta, deta_raw })
    }

    pub(crate) fn n_raw(&self) -> usize {
        let d = self.b.len();
        2 * d + d * self.scale.rank() + self.eta.as_ref().map_or(0, |e| e.len())
    }

    pub fn forward_z(&self, z: &[f64]) -> MapEval {
        let y: Vec<f64> = self.scale.mul(&DVector::from_column_slice(z)).iter().copied().collect();
        let (x, warp): (Vec<f64>, Vec<_>) = match &self.eta {
            Some(eta) => {
                let w: Vec<_> = y.iter().zip(eta).map(|(&yi, &e)| yj_eval(yi, e)).collect();
                (w.iter().map(|e| e.value).collect(), w)
            }
            None => (y.clone(), Vec::new()),
        };
        let theta = (0..y.len()).map(|i| self.b[i] + x[i]).collect();
        MapEval { z: z.to_vec(), y, theta, warp }
    }

    pub fn log_det_jac(&self, ev: &MapEval) -> Result<f64> {
        let lk: f64 = ev.warp.iter().map(|w| w.dx.ln()).sum();
        Ok(lk + self.scale.solver()?.log_det())
    }

    pub(crate) fn backward(&self, ev: &MapEval, theta_bar: &[f64], w: f64, grad: &mut [f64]) -> Result<Vec<f64>> {
        let d = self.b.len();
        let r = self.scale.rank();
        let mut ybar = DVector::zeros(d);
        for i in 0..d {
            grad[i] += theta_bar[i];
            if self.eta.is_some() {
                let ev_i = &ev.warp[i];
                ybar[i] = theta_bar[i] * ev_i.dx + w * ev_i.dlog_dx;
                let ebar = theta_bar[i] * ev_i.deta + w * ev_i.dlog_deta;
                grad[2 * d + d * r + i] += ebar * self.deta_raw[i];
            } else {
                ybar[i] = theta_bar[i];
            }
        }
        let z = DVector::from_column_slice(&ev.z);
        let j = &self.scale.factor;
        let dd = &self.scale.diag;
        let zbar = self.scale.mul(&ybar);
        // Ē = ȳ zᵀ, symmetrized through J Jᵀ
        let ztj = j.tr_mul(&z);
        let ytj = j.tr_mul(&ybar);
        let mut jbar = &ybar * ztj.transpose() + &z * ytj.transpose();
        let mut dbar = DVector::from_fn(d, |i, _| 2.0 * dd[i] * ybar[i] * z[i]);
        if w != 0.0 {
            let solver = self.scale.solver()?;
            if r > 0 {
                jbar += solver.inv_times_factor() * (2.0 * w);
            }
            let di = solver.diag_inv();
            for i in 0..d {
                dbar[i] += w * 2.0 * dd[i] * di[i];
            }
        }
        for (g, v) in grad[d..d + d * r].iter_mut().zip(jbar.iter()) {
            *g += v;
        }
        for (g, v) in grad[d + d * r..2 * d + d * r].iter_mut().zip(dbar.iter()) {
            *g += v;
        }
        Ok(zbar.iter().copied().collect())
    }

    pub(crate) fn solve_jac_t(&self, ev: &MapEval, v: &[f64]) -> Result<Vec<f64>> {
        let x = self.scale.solver()?.solve(&DVector::from_column_slice(v));
        Ok((0..x.len()).map(|i| x[i] / ev.kprime(i)).collect())
    }

    pub(crate) fn inverse_z(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let y = DVector::from_fn(theta.len(), |i, _| {
            let x = theta[i] - self.b[i];
            match &self.eta {
                Some(e) => yj_forward(x, e[i]),
                None => x,
            }
        });
        Ok(self.scale.solver()?.solve(&y).iter().copied().collect())
    }
}
