//! Distributional checks on Monte Carlo output.

use nalgebra::DMatrix;

use crate::error::{domain, Result};

/// One-sample Kolmogorov-Smirnov statistic against U(0, 1).
pub fn ks_uniform_test(samples: &[f64]) -> Result<f64> {
    if samples.len() < 1000 {
        return Err(domain(format!("KS test needs at least 1000 samples, got {}", samples.len())));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(domain("KS test got a non-finite sample"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    if s[0] == s[s.len() - 1] {
        return Err(domain("KS test got a constant sample"));
    }
    let n = s.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in s.iter().enumerate() {
        let f = x.clamp(0.0, 1.0);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}

/// Asymptotic 5% critical value `1.36/√n`.
pub fn ks_critical_5pct(n: usize) -> f64 {
    1.36 / (n as f64).sqrt()
}

/// Pearson correlation matrix of the columns of `x` (rows are draws).
pub fn empirical_corr(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(domain("correlation needs at least two draws"));
    }
    let means: Vec<f64> = (0..d).map(|j| x.column(j).mean()).collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for r in 0..n {
        for a in 0..d {
            let da = x[(r, a)] - means[a];
            for b in 0..=a {
                cov[(a, b)] += da * (x[(r, b)] - means[b]);
            }
        }
    }
    for a in 0..d {
        if cov[(a, a)] <= 0.0 {
            return Err(domain(format!("column {a} is constant")));
        }
    }
    let mut c = DMatrix::identity(d, d);
    for a in 0..d {
        for b in 0..a {
            let v = cov[(a, b)] / (cov[(a, a)] * cov[(b, b)]).sqrt();
            c[(a, b)] = v;
            c[(b, a)] = v;
        }
    }
    Ok(c)
}

/// Ranks starting at 1, ties receiving their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation matrix of the columns of `x`.
pub fn spearman_corr(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, d) = x.shape();
    let mut r = DMatrix::zeros(n, d);
    for j in 0..d {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        r.set_column(j, &nalgebra::DVector::from_vec(average_ranks(&col)));
    }
    empirical_corr(&r)
}
