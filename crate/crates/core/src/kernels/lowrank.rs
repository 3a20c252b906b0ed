//! Low-rank-plus-diagonal matrices: Woodbury solves, determinant lemma,
//! Cholesky factors by rank-1 updates and the reverse-mode Cholesky rule.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::triangular::{LowerTriangular, TriPattern};
use crate::error::{dimension, domain, Result, VcviError};

/// `(ζ I + B Bᵀ)⁻¹ x` via the Woodbury identity, never forming a `d × d`
/// matrix.
pub fn woodbury_inverse_apply(zeta: f64, b: &DMatrix<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    if !(zeta > 0.0) {
        return Err(domain(format!("zeta must be positive, got {zeta}")));
    }
    let (d, p) = b.shape();
    if x.len() != d {
        return Err(dimension(format!("x has length {}, B has {d} rows", x.len())));
    }
    if p >= d && d > 0 {
        return Err(dimension(format!("factor rank {p} must be below dimension {d}")));
    }
    if p == 0 {
        return Ok(x / zeta);
    }
    let mut k = b.tr_mul(b);
    for i in 0..p {
        k[(i, i)] += zeta;
    }
    let chol = Cholesky::new(k).ok_or_else(|| VcviError::Numerical("inner Woodbury system is singular".into()))?;
    let btx = b.tr_mul(x);
    let inner = chol.solve(&btx);
    Ok((x - b * inner) / zeta)
}

/// Lower Cholesky factor of `ζ I + B Bᵀ` built from `√ζ I` by one rank-1
/// update per column of `B`.
pub fn cholesky_rank1_updates(zeta: f64, b: &DMatrix<f64>) -> LowerTriangular {
    let c = cholesky_rank1_dense(zeta, b);
    LowerTriangular::from_dense(&c, TriPattern::Dense).expect("square by construction")
}

pub(crate) fn cholesky_rank1_dense(zeta: f64, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(zeta > 0.0, "zeta must be positive");
    let d = b.nrows();
    let mut c = DMatrix::from_diagonal_element(d, d, zeta.sqrt());
    let mut x = vec![0.0; d];
    for col in b.column_iter() {
        x.iter_mut().zip(col.iter()).for_each(|(xi, &v)| *xi = v);
        cholupdate(&mut c, &mut x);
    }
    c
}

/// In-place update `C Cᵀ + x xᵀ`, LINPACK style. `x` is overwritten.
fn cholupdate(c: &mut DMatrix<f64>, x: &mut [f64]) {
    let n = c.nrows();
    for k in 0..n {
        let ckk = c[(k, k)];
        let r = ckk.hypot(x[k]);
        assert!(r > 0.0 && r.is_finite(), "rank-1 update lost positive definiteness");
        let cs = r / ckk;
        let sn = x[k] / ckk;
        c[(k, k)] = r;
        for i in k + 1..n {
            let cik = (c[(i, k)] + sn * x[i]) / cs;
            x[i] = cs * x[i] - sn * cik;
            c[(i, k)] = cik;
        }
    }
}

/// Given `A = L Lᵀ` and the cotangent `L̄` of the factor (lower triangle
/// used), returns the symmetric cotangent of `A`.
pub(crate) fn cholesky_vjp(l: &DMatrix<f64>, lbar: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut p = l.tr_mul(&lbar.lower_triangle());
    for j in 0..n {
        p[(j, j)] *= 0.5;
        for i in 0..j {
            p[(i, j)] = 0.0;
        }
    }
    // S = L⁻ᵀ P L⁻¹
    let lt = l.transpose();
    let left = lt.solve_upper_triangular(&p).expect("nonsingular factor");
    let s = lt
        .solve_upper_triangular(&left.transpose())
        .expect("nonsingular factor")
        .transpose();
    (&s + s.transpose()) * 0.5
}

/// `E = J Jᵀ + D²` with `J` of rank below the dimension. `D` is stored as its
/// unsquared diagonal so any nonzero real is admissible.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorScale {
    pub factor: DMatrix<f64>,
    pub diag: DVector<f64>,
}

impl FactorScale {
    pub fn new(factor: DMatrix<f64>, diag: DVector<f64>) -> Result<Self> {
        let (d, w) = factor.shape();
        if diag.len() != d {
            return Err(dimension(format!("diag has length {}, factor has {d} rows", diag.len())));
        }
        if w >= d && w > 0 {
            return Err(dimension(format!("rank {w} must be below dimension {d}")));
        }
        if diag.iter().any(|&v| v == 0.0) {
            return Err(domain("diagonal entries of D must be nonzero"));
        }
        Ok(FactorScale { factor, diag })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }

    /// `E x`.
    pub fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let jt = self.factor.tr_mul(x);
        let mut y = &self.factor * jt;
        for i in 0..x.len() {
            y[i] += self.diag[i] * self.diag[i] * x[i];
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut e = &self.factor * self.factor.transpose();
        for i in 0..self.dim() {
            e[(i, i)] += self.diag[i] * self.diag[i];
        }
        e
    }

    /// Factorizes the `w × w` capacitance matrix `I + Jᵀ D⁻² J`. When `D`
    /// spans many orders of magnitude the capacitance loses definiteness in
    /// floating point, so the dense `d × d` Cholesky of `E` is used instead.
    pub fn solver(&self) -> Result<FactorSolver<'_>> {
        let dinv2 = self.diag.map(|v| 1.0 / (v * v));
        let (lo, hi) = dinv2.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if self.rank() > 0 && hi <= WOODBURY_SPREAD * lo {
            let scaled = DMatrix::from_fn(self.dim(), self.rank(), |i, k| self.factor[(i, k)] * dinv2[i]);
            let mut cap = self.factor.tr_mul(&scaled);
            for k in 0..self.rank() {
                cap[(k, k)] += 1.0;
            }
            if let Some(chol) = Cholesky::new(cap) {
                return Ok(FactorSolver { scale: self, inner: Inner::Woodbury { dinv2, scaled, chol } });
            }
        }
        if self.rank() == 0 {
            return Ok(FactorSolver { scale: self, inner: Inner::Diagonal { dinv2 } });
        }
        let chol = Cholesky::new(self.to_dense()).ok_or_else(|| VcviError::Numerical("E is numerically singular".into()))?;
        Ok(FactorSolver { scale: self, inner: Inner::Dense { chol } })
    }
}

/// Largest ratio between entries of `D⁻²` for which the capacitance form is
/// used.
const WOODBURY_SPREAD: f64 = 1e8;

enum Inner {
    Diagonal {
        dinv2: DVector<f64>,
    },
    Woodbury {
        dinv2: DVector<f64>,
        /// `D⁻² J`
        scaled: DMatrix<f64>,
        chol: Cholesky<f64, nalgebra::Dyn>,
    },
    Dense {
        chol: Cholesky<f64, nalgebra::Dyn>,
    },
}

/// Cached factorization for repeated `E⁻¹` applications.
pub struct FactorSolver<'a> {
    scale: &'a FactorScale,
    inner: Inner,
}

impl FactorSolver<'_> {
    /// `E⁻¹ x = D⁻²x − D⁻²J K⁻¹ Jᵀ D⁻² x` with `K = I + Jᵀ D⁻² J`.
    pub fn solve(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.inner {
            Inner::Diagonal { dinv2 } => x.component_mul(dinv2),
            Inner::Woodbury { dinv2, scaled, chol } => {
                let dx = x.component_mul(dinv2);
                let t = chol.solve(&self.scale.factor.tr_mul(&dx));
                dx - scaled * t
            }
            Inner::Dense { chol } => chol.solve(x),
        }
    }

    /// `log det E`, by the matrix determinant lemma when the capacitance
    /// form is in use.
    pub fn log_det(&self) -> f64 {
        match &self.inner {
            Inner::Diagonal { dinv2 } => dinv2.iter().map(|v| -v.ln()).sum(),
            Inner::Woodbury { dinv2, chol, .. } => {
                let diag_part: f64 = dinv2.iter().map(|v| -v.ln()).sum();
                let lk = chol.l_dirty();
                let cap: f64 = (0..self.scale.rank()).map(|k| 2.0 * lk[(k, k)].ln()).sum();
                diag_part + cap
            }
            Inner::Dense { chol } => {
                let l = chol.l_dirty();
                (0..self.scale.dim()).map(|i| 2.0 * l[(i, i)].ln()).sum()
            }
        }
    }

    /// `E⁻¹ J`.
    pub fn inv_times_factor(&self) -> DMatrix<f64> {
        match &self.inner {
            Inner::Diagonal { .. } => DMatrix::zeros(self.scale.dim(), 0),
            // D⁻² J K⁻¹
            Inner::Woodbury { scaled, chol, .. } => chol.solve(&scaled.transpose()).transpose(),
            Inner::Dense { chol } => chol.solve(&self.scale.factor),
        }
    }

    /// Diagonal of `E⁻¹`, in `O(d w²)` for the capacitance form.
    pub fn diag_inv(&self) -> DVector<f64> {
        let d = self.scale.dim();
        match &self.inner {
            Inner::Diagonal { dinv2 } => dinv2.clone(),
            Inner::Woodbury { dinv2, scaled, chol } => {
                let l = chol.l();
                DVector::from_fn(d, |i, _| {
                    // ‖L⁻¹ (D⁻²J)_iᵀ‖²
                    let row = scaled.row(i).transpose();
                    let v = l.solve_lower_triangular(&row).expect("nonsingular");
                    dinv2[i] - v.norm_squared()
                })
            }
            Inner::Dense { chol } => chol.inverse().diagonal(),
        }
    }
}
