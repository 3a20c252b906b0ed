use super::yj::{eta_from_raw, yj_eval, yj_forward, yj_log_deriv};
use super::{LPattern, MapEval};
use crate::error::Result;
use crate::kernels::{LowerTriangular, TriPattern};

pub(crate) fn tri_pattern(l: LPattern) -> TriPattern {
    match l {
        LPattern::Identity => TriPattern::Banded(0),
        LPattern::Dense => TriPattern::UnitDiagonal,
        LPattern::BandedL(k) | LPattern::BandedLinv(k) => TriPattern::Banded(k),
    }
}

/// `θ = b + s ∘ k_η(L z)`.
#[derive(Debug, Clone)]
pub struct M1Params {
    pub b: Vec<f64>,
    pub s: Vec<f64>,
    s_raw: Vec<f64>,
    /// Holds `L`, or `L⁻¹` when `l_inverse` is set.
    pub l: LowerTriangular,
    pub l_inverse: bool,
    pub eta: Option<Vec<f64>>,
    deta_raw: Vec<f64>,
}

impl M1Params {
    pub(crate) fn from_raw(d: usize, pattern: LPattern, warp: bool, raw: &[f64]) -> Result<Self> {
        let b = raw[..d].to_vec();
        let s_raw = raw[d..2 * d].to_vec();
        let s = s_raw.iter().map(|v| v * v).collect();
        let tp = tri_pattern(pattern);
        let nl = tp.stored(d);
        let l = LowerTriangular::from_values(d, tp, raw[2 * d..2 * d + nl].to_vec())?;
        let (eta, deta_raw) = if warp {
            let (e, de): (Vec<f64>, Vec<f64>) = raw[2 * d + nl..].iter().map(|&r| eta_from_raw(r)).unzip();
            (Some(e), de)
        } else {
            (None, Vec::new())
        };
        Ok(M1Params { b, s, s_raw, l, l_inverse: matches!(pattern, LPattern::BandedLinv(_)), eta, deta_raw })
    }

    pub(crate) fn n_raw(&self) -> usize {
        let d = self.b.len();
        2 * d + self.l.values().len() + self.eta.as_ref().map_or(0, |e| e.len())
    }

    fn apply_l(&self, z: &[f64]) -> Vec<f64> {
        if self.l_inverse {
            self.l.solve(z)
        } else {
            self.l.mul_vec(z)
        }
    }

    pub fn forward_z(&self, z: &[f64]) -> MapEval {
        let y = self.apply_l(z);
        let (x, warp): (Vec<f64>, Vec<_>) = match &self.eta {
            Some(eta) => {
                let w: Vec<_> = y.iter().zip(eta).map(|(&yi, &e)| yj_eval(yi, e)).collect();
                (w.iter().map(|e| e.value).collect(), w)
            }
            None => (y.clone(), Vec::new()),
        };
        let theta = (0..y.len()).map(|i| self.b[i] + self.s[i] * x[i]).collect();
        MapEval { z: z.to_vec(), y, theta, warp }
    }

    pub fn log_det_jac(&self, ev: &MapEval) -> f64 {
        let ls: f64 = self.s.iter().map(|v| v.ln()).sum();
        let lk: f64 = ev.warp.iter().map(|w| w.dx.ln()).sum();
        ls + lk
    }

    pub(crate) fn backward(&self, ev: &MapEval, theta_bar: &[f64], w: f64, grad: &mut [f64]) -> Vec<f64> {
        let d = self.b.len();
        let nl = self.l.values().len();
        let mut ybar = vec![0.0; d];
        for i in 0..d {
            grad[i] += theta_bar[i];
            let (x, kp) = if ev.warp.is_empty() { (ev.y[i], 1.0) } else { (ev.warp[i].value, ev.warp[i].dx) };
            let sbar = theta_bar[i] * x + w / self.s[i];
            grad[d + i] += 2.0 * self.s_raw[i] * sbar;
            ybar[i] = theta_bar[i] * self.s[i] * kp;
            if let Some(_) = &self.eta {
                let ev_i = &ev.warp[i];
                ybar[i] += w * ev_i.dlog_dx;
                let ebar = theta_bar[i] * self.s[i] * ev_i.deta + w * ev_i.dlog_deta;
                grad[2 * d + nl + i] += ebar * self.deta_raw[i];
            }
        }
        let lgrad = &mut grad[2 * d..2 * d + nl];
        if self.l_inverse {
            // y = L⁻¹ z with the stored matrix being the inverse factor
            let zbar = self.l.solve_t(&ybar);
            let neg: Vec<f64> = zbar.iter().map(|v| -v).collect();
            self.l.accumulate_outer(lgrad, &neg, &ev.y);
            zbar
        } else {
            self.l.accumulate_outer(lgrad, &ybar, &ev.z);
            self.l.mul_t_vec(&ybar)
        }
    }

    pub(crate) fn solve_jac_t(&self, ev: &MapEval, v: &[f64]) -> Vec<f64> {
        let w = if self.l_inverse { self.l.mul_t_vec(v) } else { self.l.solve_t(v) };
        (0..w.len()).map(|i| w[i] / (self.s[i] * ev.kprime(i))).collect()
    }

    pub(crate) fn inverse_z(&self, theta: &[f64]) -> Vec<f64> {
        let y: Vec<f64> = (0..theta.len())
            .map(|i| {
                let x = (theta[i] - self.b[i]) / self.s[i];
                match &self.eta {
                    Some(e) => yj_forward(x, e[i]),
                    None => x,
                }
            })
            .collect();
        if self.l_inverse {
            self.l.mul_vec(&y)
        } else {
            self.l.solve(&y)
        }
    }

    /// `Σ log k'(y_i)` for a given `y`.
    pub fn log_warp_jac(&self, y: &[f64]) -> f64 {
        match &self.eta {
            Some(e) => y.iter().zip(e).map(|(&yi, &ei)| yj_log_deriv(yi, ei)).sum(),
            None => 0.0,
        }
    }
}
