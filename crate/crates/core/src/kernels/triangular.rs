//! Packed lower-triangular matrices with declared sparsity patterns.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{dimension, spec, Result};

/// Which entries of a lower-triangular matrix are stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TriPattern {
    /// Full lower triangle including the diagonal.
    Dense,
    /// Strict lower triangle; the diagonal is implicitly one.
    UnitDiagonal,
    /// Unit diagonal plus `k` sub-diagonals. `Banded(0)` is the identity.
    Banded(usize),
    /// Diagonal only.
    Diagonal,
}

impl TriPattern {
    pub fn unit_diagonal(self) -> bool {
        matches!(self, TriPattern::UnitDiagonal | TriPattern::Banded(_))
    }

    /// Number of stored values for a matrix of size `dim`.
    pub fn stored(self, dim: usize) -> usize {
        (0..dim).map(|j| self.col_len(dim, j)).sum()
    }

    fn first_row(self, j: usize) -> usize {
        if self.unit_diagonal() {
            j + 1
        } else {
            j
        }
    }

    fn col_len(self, dim: usize, j: usize) -> usize {
        match self {
            TriPattern::Dense => dim - j,
            TriPattern::UnitDiagonal => dim - j - 1,
            TriPattern::Banded(k) => (dim - j - 1).min(k),
            TriPattern::Diagonal => 1,
        }
    }
}

/// Column-major packed lower-triangular matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerTriangular {
    dim: usize,
    pattern: TriPattern,
    values: Vec<f64>,
    col_ptr: Vec<usize>,
}

impl LowerTriangular {
    /// All stored entries zero. For unit-diagonal patterns this is the identity.
    pub fn zeros(dim: usize, pattern: TriPattern) -> Self {
        let mut col_ptr = Vec::with_capacity(dim + 1);
        col_ptr.push(0);
        for j in 0..dim {
            col_ptr.push(col_ptr[j] + pattern.col_len(dim, j));
        }
        let n = col_ptr[dim];
        LowerTriangular { dim, pattern, values: vec![0.0; n], col_ptr }
    }

    pub fn identity(dim: usize) -> Self {
        Self::zeros(dim, TriPattern::Banded(0))
    }

    pub fn from_values(dim: usize, pattern: TriPattern, values: Vec<f64>) -> Result<Self> {
        let mut l = Self::zeros(dim, pattern);
        if values.len() != l.values.len() {
            return Err(dimension(format!(
                "pattern {pattern:?} of size {dim} stores {} values, got {}",
                l.values.len(),
                values.len()
            )));
        }
        l.values = values;
        Ok(l)
    }

    /// Copies the lower triangle of `m` that the pattern stores.
    pub fn from_dense(m: &DMatrix<f64>, pattern: TriPattern) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(dimension("matrix must be square"));
        }
        let mut l = Self::zeros(m.nrows(), pattern);
        for j in 0..l.dim {
            for (idx, i) in l.col_range(j) {
                l.values[idx] = m[(i, j)];
            }
        }
        Ok(l)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pattern(&self) -> TriPattern {
        self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `(storage index, row)` for the stored entries of column `j`.
    #[inline]
    pub fn col_range(&self, j: usize) -> impl Iterator<Item = (usize, usize)> {
        let start = self.col_ptr[j];
        let first = self.pattern.first_row(j);
        (start..self.col_ptr[j + 1]).map(move |idx| (idx, first + idx - start))
    }

    /// Storage index of entry `(i, j)` if stored.
    pub fn index_of(&self, i: usize, j: usize) -> Option<usize> {
        if i < j || j >= self.dim || i >= self.dim {
            return None;
        }
        let first = self.pattern.first_row(j);
        let len = self.col_ptr[j + 1] - self.col_ptr[j];
        if i >= first && i < first + len {
            Some(self.col_ptr[j] + i - first)
        } else {
            None
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j && self.pattern.unit_diagonal() {
            return 1.0;
        }
        self.index_of(i, j).map_or(0.0, |idx| self.values[idx])
    }

    #[inline]
    fn diag(&self, j: usize) -> f64 {
        if self.pattern.unit_diagonal() {
            1.0
        } else {
            self.values[self.col_ptr[j]]
        }
    }

    /// `L x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        if self.pattern.unit_diagonal() {
            y.copy_from_slice(x);
        }
        for j in 0..self.dim {
            let xj = x[j];
            for (idx, i) in self.col_range(j) {
                y[i] += self.values[idx] * xj;
            }
        }
        y
    }

    /// `Lᵀ x`.
    pub fn mul_t_vec(&self, x: &[f64]) -> Vec<f64> {
        let unit = self.pattern.unit_diagonal();
        (0..self.dim)
            .map(|j| {
                let mut acc = if unit { x[j] } else { 0.0 };
                for (idx, i) in self.col_range(j) {
                    acc += self.values[idx] * x[i];
                }
                acc
            })
            .collect()
    }

    /// Solves `L x = b` by column-oriented forward substitution.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        let unit = self.pattern.unit_diagonal();
        for j in 0..self.dim {
            let start = self.col_ptr[j];
            let mut rows = self.col_range(j);
            if !unit {
                x[j] /= self.values[start];
                rows.next();
            }
            let xj = x[j];
            for (idx, i) in rows {
                x[i] -= self.values[idx] * xj;
            }
        }
        x
    }

    /// Solves `Lᵀ x = b` by back substitution.
    pub fn solve_t(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        let unit = self.pattern.unit_diagonal();
        for j in (0..self.dim).rev() {
            let mut acc = x[j];
            let mut rows = self.col_range(j);
            if !unit {
                rows.next();
            }
            for (idx, i) in rows {
                acc -= self.values[idx] * x[i];
            }
            x[j] = if unit { acc } else { acc / self.diag(j) };
        }
        x
    }

    /// `grad[idx(i,j)] += a_i b_j` over stored entries, excluding an implicit
    /// unit diagonal.
    pub fn accumulate_outer(&self, grad: &mut [f64], a: &[f64], b: &[f64]) {
        for j in 0..self.dim {
            let bj = b[j];
            for (idx, i) in self.col_range(j) {
                grad[idx] += a[i] * bj;
            }
        }
    }

    pub fn log_abs_det(&self) -> f64 {
        if self.pattern.unit_diagonal() {
            0.0
        } else {
            (0..self.dim).map(|j| self.diag(j).abs().ln()).sum()
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        if self.pattern.unit_diagonal() {
            m.fill_diagonal(1.0);
        }
        for j in 0..self.dim {
            for (idx, i) in self.col_range(j) {
                m[(i, j)] = self.values[idx];
            }
        }
        m
    }
}

/// Solves `Linv x = z` for a unit-diagonal banded `Linv`, touching only band
/// entries.
pub fn banded_unit_lower_solve(linv: &LowerTriangular, z: &[f64]) -> Result<Vec<f64>> {
    if !matches!(linv.pattern(), TriPattern::Banded(_)) {
        return Err(spec("banded solve needs a unit-diagonal banded matrix"));
    }
    if z.len() != linv.dim() {
        return Err(dimension(format!("rhs has length {}, matrix is {}", z.len(), linv.dim())));
    }
    Ok(linv.solve(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random(dim: usize, pattern: TriPattern, rng: &mut ChaCha20Rng) -> LowerTriangular {
        let n = pattern.stored(dim);
        let mut vals: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut l = LowerTriangular::zeros(dim, pattern);
        if !pattern.unit_diagonal() {
            for j in 0..dim {
                vals[l.col_ptr[j]] = 1.0 + rng.random::<f64>();
            }
        }
        l.values = vals;
        l
    }

    #[test]
    fn storage_sizes() {
        assert_eq!(TriPattern::Dense.stored(4), 10);
        assert_eq!(TriPattern::UnitDiagonal.stored(4), 6);
        assert_eq!(TriPattern::Banded(1).stored(4), 3);
        assert_eq!(TriPattern::Banded(2).stored(4), 5);
        assert_eq!(TriPattern::Banded(0).stored(4), 0);
        assert_eq!(TriPattern::Diagonal.stored(4), 4);
    }

    #[test]
    fn products_and_solves_match_dense() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for pattern in [
            TriPattern::Dense,
            TriPattern::UnitDiagonal,
            TriPattern::Banded(2),
            TriPattern::Diagonal,
        ] {
            let l = random(7, pattern, &mut rng);
            let dense = l.to_dense();
            let x: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
            let xv = nalgebra::DVector::from_column_slice(&x);
            let y = l.mul_vec(&x);
            let yt = l.mul_t_vec(&x);
            let d = &dense * &xv;
            let dt = dense.transpose() * &xv;
            for i in 0..7 {
                assert!((y[i] - d[i]).abs() < 1e-14);
                assert!((yt[i] - dt[i]).abs() < 1e-14);
            }
            let s = l.solve(&y);
            let st = l.solve_t(&yt);
            for i in 0..7 {
                assert!((s[i] - x[i]).abs() < 1e-12, "{pattern:?}");
                assert!((st[i] - x[i]).abs() < 1e-12, "{pattern:?}");
            }
            for i in 0..7 {
                for j in 0..7 {
                    assert_eq!(l.get(i, j), dense[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn banded_solve_examples() {
        let id = LowerTriangular::identity(5);
        let z = [1.0, -2.0, 3.0, 0.5, 4.0];
        assert_eq!(banded_unit_lower_solve(&id, &z).unwrap(), z.to_vec());

        let a = 0.7;
        let l = LowerTriangular::from_values(2, TriPattern::Banded(1), vec![a]).unwrap();
        let x = banded_unit_lower_solve(&l, &[2.0, 5.0]).unwrap();
        assert_eq!(x, vec![2.0, 5.0 - a * 2.0]);

        let dense = LowerTriangular::identity(3);
        let not_banded = LowerTriangular::from_dense(&dense.to_dense(), TriPattern::Dense).unwrap();
        assert!(banded_unit_lower_solve(&not_banded, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn banded_solve_matches_dense_solve() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let l = random(50, TriPattern::Banded(3), &mut rng);
        let z: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = banded_unit_lower_solve(&l, &z).unwrap();
        let dense = l.to_dense();
        let oracle = dense
            .solve_lower_triangular(&nalgebra::DVector::from_column_slice(&z))
            .unwrap();
        for i in 0..50 {
            assert!((x[i] - oracle[i]).abs() < 1e-10 * (1.0 + oracle[i].abs()));
        }
    }

    #[test]
    fn outer_accumulation_skips_unit_diagonal() {
        let l = LowerTriangular::zeros(3, TriPattern::UnitDiagonal);
        let mut g = vec![0.0; 3];
        l.accumulate_outer(&mut g, &[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]);
        // entries (1,0), (2,0), (2,1)
        assert_eq!(g, vec![8.0, 12.0, 15.0]);
    }
}
