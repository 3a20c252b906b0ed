//! Matrices with orthonormal columns: tangent projection and QR retraction.

use nalgebra::DMatrix;

/// Replaces the columns of `q` by their modified Gram-Schmidt orthonormal
/// basis, i.e. the `Q` factor of a QR decomposition with positive diagonal `R`.
pub fn retract_qr(q: &mut DMatrix<f64>) {
    let cols = q.ncols();
    for j in 0..cols {
        for k in 0..j {
            let proj = q.column(k).dot(&q.column(j));
            let ck = q.column(k).into_owned();
            q.column_mut(j).axpy(-proj, &ck, 1.0);
        }
        let n = q.column(j).norm();
        if n > 0.0 {
            q.column_mut(j).scale_mut(1.0 / n);
        }
    }
}

/// Projects a Euclidean gradient onto the tangent space at `q`:
/// `G − Q sym(Qᵀ G)`.
pub fn project_tangent(q: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let qtg = q.tr_mul(g);
    let sym = (&qtg + qtg.transpose()) * 0.5;
    g - q * sym
}

/// In-place retraction of a column-major slice.
pub fn retract_slice(data: &mut [f64], rows: usize, cols: usize) {
    let mut m = DMatrix::from_column_slice(rows, cols, data);
    retract_qr(&mut m);
    data.copy_from_slice(m.as_slice());
}

/// Tangent projection of a column-major gradient slice at the point `q`.
pub fn project_slice(q: &[f64], g: &mut [f64], rows: usize, cols: usize) {
    let qm = DMatrix::from_column_slice(rows, cols, q);
    let gm = DMatrix::from_column_slice(rows, cols, g);
    g.copy_from_slice(project_tangent(&qm, &gm).as_slice());
}

/// Largest entry of `|QᵀQ − I|`.
pub fn orthonormality_error(q: &DMatrix<f64>) -> f64 {
    let g = q.tr_mul(q) - DMatrix::identity(q.ncols(), q.ncols());
    g.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn retraction_gives_orthonormal_columns() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut q = DMatrix::from_fn(6, 4, |_, _| rng.sample(StandardNormal));
        let orig = q.clone();
        retract_qr(&mut q);
        assert!(orthonormality_error(&q) < 1e-12);
        // same span: R = Qᵀ A is upper triangular with positive diagonal
        let r = q.tr_mul(&orig);
        for j in 0..4 {
            assert!(r[(j, j)] > 0.0);
            for i in j + 1..4 {
                assert!(r[(i, j)].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projection_lands_in_tangent_space() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut q = DMatrix::from_fn(5, 3, |_, _| rng.sample(StandardNormal));
        retract_qr(&mut q);
        let g = DMatrix::from_fn(5, 3, |_, _| rng.sample(StandardNormal));
        let p = project_tangent(&q, &g);
        let s = q.tr_mul(&p);
        // QᵀP is skew-symmetric
        assert!((&s + s.transpose()).norm() < 1e-12);
    }
}
