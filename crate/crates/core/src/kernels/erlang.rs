//! Erlang (unit scale, integer shape) distribution and the Kendall
//! distribution function of the independence copula.
//!
//! For shape `k` the survival function is the finite Poisson sum
//! `S(r) = Σ_{b<k} r^b e^{-r} / b!`. The lower tail is evaluated with the
//! convergent series for the regularized incomplete gamma function whenever
//! `r < k`, where `1 - S` would cancel.

use crate::error::{domain, Result};

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|b| (b as f64).ln()).sum()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `ln S(r)`: logarithm of the Poisson partial sum with running-term
/// recurrence carried in log space so `e^{-r}` never underflows.
fn ln_sf_sum(r: f64, shape: usize) -> f64 {
    if r == 0.0 {
        return 0.0;
    }
    let ln_r = r.ln();
    let mut terms = Vec::with_capacity(shape);
    let mut lt = -r;
    terms.push(lt);
    for b in 1..shape {
        lt += ln_r - (b as f64).ln();
        terms.push(lt);
    }
    log_sum_exp(&terms)
}

/// `ln F(r)` through the lower incomplete gamma series
/// `P(k, r) = e^{-r} r^k / k! · Σ_n r^n / ((k+1)…(k+n))`.
fn ln_cdf_series(r: f64, shape: usize) -> f64 {
    if r == 0.0 {
        return f64::NEG_INFINITY;
    }
    let k = shape as f64;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut n = 1.0;
    loop {
        term *= r / (k + n);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
        n += 1.0;
    }
    -r + k * r.ln() - ln_factorial(shape) + sum.ln()
}

/// Returns `(F(r), S(r))` with whichever is smaller computed directly.
pub(crate) fn erlang_cdf_sf(r: f64, shape: usize) -> (f64, f64) {
    if r <= 0.0 {
        return (0.0, 1.0);
    }
    if r < shape as f64 {
        let p = ln_cdf_series(r, shape).exp();
        (p, 1.0 - p)
    } else {
        let s = ln_sf_sum(r, shape).exp();
        (1.0 - s, s)
    }
}

fn ln_cdf_sf(r: f64, shape: usize) -> (f64, f64) {
    if r < shape as f64 {
        let lp = ln_cdf_series(r, shape);
        (lp, (-lp.exp()).ln_1p())
    } else {
        let ls = ln_sf_sum(r, shape);
        ((-ls.exp()).ln_1p(), ls)
    }
}

/// Erlang distribution function with unit scale.
pub fn erlang_cdf(r: f64, shape: usize) -> f64 {
    assert!(shape >= 1, "Erlang shape must be positive");
    erlang_cdf_sf(r, shape).0
}

/// `1 - erlang_cdf(r, shape)`.
pub fn erlang_sf(r: f64, shape: usize) -> f64 {
    assert!(shape >= 1, "Erlang shape must be positive");
    erlang_cdf_sf(r, shape).1
}

pub fn erlang_ln_pdf(r: f64, shape: usize) -> f64 {
    if r <= 0.0 {
        return if shape == 1 { 0.0 } else { f64::NEG_INFINITY };
    }
    (shape as f64 - 1.0) * r.ln() - r - ln_factorial(shape - 1)
}

/// Quantile of the Erlang distribution, `p ∈ [0, 1)`.
pub fn erlang_quantile(p: f64, shape: usize) -> Result<f64> {
    if shape == 0 {
        return Err(domain("Erlang shape must be positive"));
    }
    if !(0.0..1.0).contains(&p) {
        return Err(domain(format!("Erlang quantile requires 0 <= p < 1, got {p}")));
    }
    Ok(erlang_quantile_pair(p, 1.0 - p, shape))
}

/// Quantile given both tail masses `p = F(r)` and `q = 1 - p`. The equation is
/// solved on the logarithm of the smaller tail, by Newton's method guarded by
/// a bisection bracket, and iterated to machine precision.
pub(crate) fn erlang_quantile_pair(p: f64, q: f64, shape: usize) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if shape == 1 {
        // closed form: F(r) = 1 - e^{-r}
        return if q < 0.5 { -q.ln() } else { -(-p).ln_1p() };
    }
    let k = shape as f64;
    let use_lower = p <= q;
    let target = if use_lower { p.ln() } else { q.ln() };
    // g is increasing in r on both branches
    let g = |r: f64| -> (f64, f64) {
        let (lf, ls) = ln_cdf_sf(r, shape);
        let lpdf = erlang_ln_pdf(r, shape);
        if use_lower {
            (lf - target, (lpdf - lf).exp())
        } else {
            (target - ls, (lpdf - ls).exp())
        }
    };

    let mut lo = 0.0_f64;
    let mut hi = k + 10.0 * k.sqrt() + 40.0;
    while g(hi).0 < 0.0 {
        lo = hi;
        hi *= 2.0;
    }

    // Wilson-Hilferty start
    let z = super::normal::quantile_from_pair(p, q);
    let wh = k * (1.0 - 1.0 / (9.0 * k) + z / (3.0 * k.sqrt())).powi(3);
    let mut r = if wh > lo && wh < hi { wh } else { 0.5 * (lo + hi) };

    for _ in 0..200 {
        let (val, slope) = g(r);
        if val == 0.0 {
            return r;
        }
        if val < 0.0 {
            lo = r;
        } else {
            hi = r;
        }
        let mut next = r - val / slope;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        let step = (next - r).abs();
        r = next;
        if step <= 4.0 * f64::EPSILON * r || hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    r
}

/// Kendall distribution function of the `d`-dimensional independence copula,
/// `K(t) = t Σ_{b<d} (-ln t)^b / b!`, evaluated by Horner's rule.
pub fn kendall_cdf(t: f64, d: usize) -> Result<f64> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(domain(format!("Kendall distribution requires 0 < t <= 1, got {t}")));
    }
    if d == 0 {
        return Err(domain("Kendall distribution needs a positive block size"));
    }
    Ok(kendall_from_neg_log(-t.ln(), d))
}

/// `K(t)` with `x = -ln t` already in hand (e.g. `x = Σ -ln u_i`).
pub fn kendall_from_neg_log(x: f64, d: usize) -> f64 {
    (-x).exp() * horner_poisson_poly(x, d)
}

/// `Σ_{b<d} x^b / b!` by Horner, dropping the top terms once they fall below
/// 1e-18 relative to the leading part.
fn horner_poisson_poly(x: f64, d: usize) -> f64 {
    let mut top = d - 1;
    if top > 0 {
        let mut term = 1.0;
        let mut sum = 1.0;
        for b in 1..=top {
            term *= x / b as f64;
            sum += term;
            if b as f64 > x && term < 1e-18 * sum {
                top = b;
                break;
            }
        }
    }
    let mut acc = 1.0;
    for b in (1..=top).rev() {
        acc = 1.0 + acc * x / b as f64;
    }
    acc
}
