use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{dimension, domain, Result};

/// Compressed sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    pub fn from_dense(x: &DMatrix<f64>) -> Self {
        let (rows, cols) = x.shape();
        let mut row_ptr = vec![0];
        let (mut col_idx, mut values) = (Vec::new(), Vec::new());
        for r in 0..rows {
            for c in 0..cols {
                let v = x[(r, c)];
                if v != 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Csr { rows, cols, row_ptr, col_idx, values }
    }

    /// From `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut t: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = t.iter().find(|(r, c, _)| *r >= rows || *c >= cols) {
            return Err(dimension(format!("entry ({r}, {c}) outside a {rows}×{cols} matrix")));
        }
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; rows + 1];
        let (mut col_idx, mut values): (Vec<usize>, Vec<f64>) = (Vec::new(), Vec::new());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Csr { rows, cols, row_ptr, col_idx, values })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                x[(r, self.col_idx[k])] += self.values[k];
            }
        }
        x
    }
}

/// Design matrix in dense or sparse row storage.
#[derive(Debug, Clone, PartialEq)]
pub enum Design {
    Dense(DMatrix<f64>),
    Sparse(Csr),
}

impl Design {
    /// Picks sparse storage when more than half of the entries are zero.
    pub fn auto(x: DMatrix<f64>) -> Self {
        let zeros = x.iter().filter(|&&v| v == 0.0).count();
        if 2 * zeros > x.len() {
            Design::Sparse(Csr::from_dense(&x))
        } else {
            Design::Dense(x)
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            Design::Dense(x) => x.nrows(),
            Design::Sparse(s) => s.rows,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Design::Dense(x) => x.ncols(),
            Design::Sparse(s) => s.cols,
        }
    }

    /// Fraction of nonzero entries.
    pub fn density(&self) -> f64 {
        let total = (self.rows() * self.cols()).max(1) as f64;
        match self {
            Design::Dense(x) => x.iter().filter(|&&v| v != 0.0).count() as f64 / total,
            Design::Sparse(s) => s.values.iter().filter(|&&v| v != 0.0).count() as f64 / total,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Design::Dense(x) => x.clone(),
            Design::Sparse(s) => s.to_dense(),
        }
    }

    /// `x_rᵀ β`.
    #[inline]
    pub fn row_dot(&self, r: usize, beta: &[f64]) -> f64 {
        match self {
            Design::Dense(x) => (0..x.ncols()).map(|c| x[(r, c)] * beta[c]).sum(),
            Design::Sparse(s) => (s.row_ptr[r]..s.row_ptr[r + 1]).map(|k| s.values[k] * beta[s.col_idx[k]]).sum(),
        }
    }

    /// `acc += w · x_r`.
    #[inline]
    pub fn row_axpy(&self, r: usize, w: f64, acc: &mut [f64]) {
        match self {
            Design::Dense(x) => {
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += w * x[(r, c)];
                }
            }
            Design::Sparse(s) => {
                for k in s.row_ptr[r]..s.row_ptr[r + 1] {
                    acc[s.col_idx[k]] += w * s.values[k];
                }
            }
        }
    }
}

/// Simulated logistic-regression data.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub beta: Vec<f64>,
}

/// `X` i.i.d. normal with standardized columns, a `sparsity` fraction of
/// coefficients drawn as `±U(1, 2)`, `y ~ Bernoulli(logistic(Xβ))`.
pub fn simulate_logistic_dataset(n: usize, m: usize, sparsity: f64, seed: u64) -> Result<SimulatedData> {
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(domain(format!("sparsity must lie in [0, 1], got {sparsity}")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut x = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    if n > 1 {
        for mut col in x.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
            let sd = (col.norm_squared() / n as f64).sqrt();
            if sd > 0.0 {
                col /= sd;
            }
        }
    }
    let k = (sparsity * m as f64).round() as usize;
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut rng);
    let mut beta = vec![0.0; m];
    for &i in &idx[..k] {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        beta[i] = sign * rng.random_range(1.0..2.0);
    }
    let y = (0..n)
        .map(|r| {
            let eta: f64 = (0..m).map(|c| x[(r, c)] * beta[c]).sum();
            if rng.random::<f64>() < super::sigmoid(eta) { 1.0 } else { 0.0 }
        })
        .collect();
    Ok(SimulatedData { x, y, beta })
}
