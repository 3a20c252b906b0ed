//! Inverse Yeo-Johnson warp `k_η` with `η ∈ (0, 2)`; `η = 1` is the identity.
//!
//! For `x ≥ 0`: `k = (1 + xη)^{1/η} − 1`. For `x < 0`, with `e = 2 − η`:
//! `k = 1 − (1 − x e)^{1/e}`.

/// Value and partial derivatives of the warp at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YjEval {
    pub value: f64,
    /// `dk/dx`, always positive.
    pub dx: f64,
    /// `dk/dη`
    pub deta: f64,
    /// `∂ log k'/∂x`
    pub dlog_dx: f64,
    /// `∂ log k'/∂η`
    pub dlog_deta: f64,
}

pub fn yj_inverse(x: f64, eta: f64) -> f64 {
    if x >= 0.0 {
        ((x * eta).ln_1p() / eta).exp_m1()
    } else {
        let e = 2.0 - eta;
        -((-x * e).ln_1p() / e).exp_m1()
    }
}

/// `(dk/dx, dk/dη)`.
pub fn yj_inverse_deriv(x: f64, eta: f64) -> (f64, f64) {
    let ev = yj_eval(x, eta);
    (ev.dx, ev.deta)
}

pub fn yj_eval(x: f64, eta: f64) -> YjEval {
    if x >= 0.0 {
        let a = 1.0 + x * eta;
        let la = (x * eta).ln_1p();
        let pow = (la / eta).exp();
        let value = (la / eta).exp_m1();
        let dx = ((1.0 / eta - 1.0) * la).exp();
        let deta = pow * (x / (eta * a) - la / (eta * eta));
        YjEval {
            value,
            dx,
            deta,
            dlog_dx: (1.0 - eta) / a,
            dlog_deta: -la / (eta * eta) + (1.0 / eta - 1.0) * x / a,
        }
    } else {
        let e = 2.0 - eta;
        let c = 1.0 - x * e;
        let lc = (-x * e).ln_1p();
        let pow = (lc / e).exp();
        let value = -(lc / e).exp_m1();
        let dx = ((1.0 / e - 1.0) * lc).exp();
        let deta = pow * (-lc / (e * e) - x / (e * c));
        YjEval {
            value,
            dx,
            deta,
            dlog_dx: (e - 1.0) / c,
            dlog_deta: lc / (e * e) + (1.0 / e - 1.0) * x / c,
        }
    }
}

/// `log k'_η(x)`.
pub fn yj_log_deriv(x: f64, eta: f64) -> f64 {
    if x >= 0.0 {
        (1.0 / eta - 1.0) * (x * eta).ln_1p()
    } else {
        let e = 2.0 - eta;
        (1.0 / e - 1.0) * (-x * e).ln_1p()
    }
}

/// The forward Yeo-Johnson transform, `k_η⁻¹`.
pub fn yj_forward(t: f64, eta: f64) -> f64 {
    if t >= 0.0 {
        (eta * t.ln_1p()).exp_m1() / eta
    } else {
        let e = 2.0 - eta;
        -(e * (-t).ln_1p()).exp_m1() / e
    }
}

/// `η = 2 σ(η̃)` and its derivative.
#[inline]
pub(crate) fn eta_from_raw(raw: f64) -> (f64, f64) {
    let s = 1.0 / (1.0 + (-raw).exp());
    (2.0 * s, 2.0 * s * (1.0 - s))
}
