//! Adaptive random-walk Metropolis reference sampler for small targets.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{dimension, spec, Result, VcviError};
use crate::targets::Target;

pub const MAX_DIM: usize = 64;
pub const MAX_STORED: usize = 100_000;
const TARGET_ACCEPT: f64 = 0.234;
const ADAPT_BATCH: usize = 200;

#[derive(Debug, Clone, Serialize)]
pub struct McmcChain {
    /// Post-burn-in, thinned draws, one per row.
    #[serde(skip)]
    pub draws: DMatrix<f64>,
    /// Acceptance rate after adaptation stopped.
    pub acceptance_rate: f64,
    pub dim: usize,
    pub seed: u64,
    pub steps: usize,
    pub thin: usize,
    /// Final proposal scale multiplier.
    pub scale: f64,
    pub warning: Option<String>,
}

impl McmcChain {
    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim).map(|j| self.draws.column(j).mean()).collect()
    }

    /// Writes the draws with a `theta_1, …, theta_d` header.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let io = |e: csv::Error| VcviError::Checkpoint(e.to_string());
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record((1..=self.dim).map(|j| format!("theta_{j}"))).map_err(io)?;
        for row in self.draws.row_iter() {
            wr.write_record(row.iter().map(|v| format!("{v:e}"))).map_err(io)?;
        }
        wr.flush().map_err(|e| VcviError::Checkpoint(e.to_string()))
    }
}

/// Gaussian random-walk Metropolis. During the first half of `steps` the
/// proposal covariance follows the running sample covariance, scaled so the
/// acceptance rate approaches 0.234; the second half is kept and thinned to
/// at most [`MAX_STORED`] rows.
pub fn rwm_sample(target: &dyn Target, init: &[f64], steps: usize, seed: u64) -> Result<McmcChain> {
    let d = target.dim();
    if d == 0 || d > MAX_DIM {
        return Err(spec(format!("reference sampler supports 1 ≤ d ≤ {MAX_DIM}, got {d}")));
    }
    if init.len() != d {
        return Err(dimension(format!("initial point has length {}, target {d}", init.len())));
    }
    if steps < 2 * ADAPT_BATCH {
        return Err(spec(format!("need at least {} steps", 2 * ADAPT_BATCH)));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut x = DVector::from_column_slice(init);
    let mut lp = target.log_h(init);
    if !lp.is_finite() {
        return Err(VcviError::Domain("log density is not finite at the initial point".into()));
    }
    let burn = steps / 2;
    let kept = steps - burn;
    let thin = kept.div_ceil(MAX_STORED);
    let mut draws = DMatrix::zeros(kept / thin, d);

    let mut log_scale = (2.38 / (d as f64).sqrt()).ln() - 2.0;
    let mut chol = DMatrix::<f64>::identity(d, d);
    // running moments of the burn-in draws
    let mut mean = DVector::<f64>::zeros(d);
    let mut m2 = DMatrix::<f64>::zeros(d, d);
    let (mut batch_acc, mut accepted_after) = (0usize, 0usize);

    for t in 0..steps {
        let eps = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &x + &chol * eps * log_scale.exp();
        let ly = target.log_h(y.as_slice());
        let accept = ly.is_finite() && rng.random::<f64>().ln() < ly - lp;
        if accept {
            x = y;
            lp = ly;
        }
        if t < burn {
            batch_acc += accept as usize;
            let n = (t + 1) as f64;
            let delta = &x - &mean;
            mean += &delta / n;
            m2 += &delta * (&x - &mean).transpose();
            if (t + 1) % ADAPT_BATCH == 0 {
                let k = ((t + 1) / ADAPT_BATCH) as f64;
                let rate = batch_acc as f64 / ADAPT_BATCH as f64;
                log_scale += (rate - TARGET_ACCEPT) / k.sqrt().max(1.0) * 2.0;
                batch_acc = 0;
                if t + 1 >= 10 * ADAPT_BATCH {
                    let mut cov = &m2 / (n - 1.0);
                    let ridge = 1e-10 * (cov.trace() / d as f64).max(1e-300);
                    for i in 0..d {
                        cov[(i, i)] += ridge;
                    }
                    if let Some(c) = cov.cholesky() {
                        chol = c.l();
                        if t + 1 == 10 * ADAPT_BATCH {
                            // switch from identity to the empirical shape
                            log_scale = (2.38 / (d as f64).sqrt()).ln();
                        }
                    }
                }
            }
        } else {
            accepted_after += accept as usize;
            let k = t - burn;
            if k % thin == 0 && k / thin < draws.nrows() {
                draws.row_mut(k / thin).copy_from(&x.transpose());
            }
        }
    }
    let rate = accepted_after as f64 / kept as f64;
    let warning = (!(0.05..=0.7).contains(&rate))
        .then(|| format!("acceptance rate {rate:.3} after adaptation is outside (0.05, 0.7)"));
    Ok(McmcChain { draws, acceptance_rate: rate, dim: d, seed, steps, thin, scale: log_scale.exp(), warning })
}
