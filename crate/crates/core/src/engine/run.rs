//! The optimization loop, traces, checkpoints and Monte Carlo helpers.

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::assembly::Assembly;
use super::elbo::Estimator;
use super::optim::{OptimState, Optimizer};
use crate::error::{dimension, spec, Result, VcviError};
use crate::layout::IndexMap;
use crate::parallel::{map_chunks, Parallelism};
use crate::targets::Target;

pub const DEFAULT_STEPS: u64 = 40_000;
pub const DEFAULT_WINDOW: usize = 1000;
pub const MAX_CONSECUTIVE_SKIPS: usize = 50;
const CHECKPOINT_VERSION: u32 = 1;
/// Draws per RNG stream in the Monte Carlo helpers. Fixed so results do not
/// depend on the thread count.
const MC_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub steps: u64,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub estimator: Estimator,
    pub window: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            steps: DEFAULT_STEPS,
            seed: 0,
            optimizer: Optimizer::default(),
            estimator: Estimator::default(),
            window: DEFAULT_WINDOW,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub elbo: f64,
    pub elapsed_ns: u64,
}

/// One record per step. Skipped steps keep their (non-finite) estimate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ElboTrace {
    pub records: Vec<TraceRecord>,
}

impl ElboTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn elbos(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.elbo).collect()
    }

    /// Median of the estimates over exactly the final `window` records.
    pub fn summary(&self, window: usize) -> Result<f64> {
        if window == 0 || window > self.records.len() {
            return Err(spec(format!("summary window {window} outside 1..={}", self.records.len())));
        }
        Ok(median(&self.elbos()[self.records.len() - window..]))
    }

    pub fn total_ns(&self) -> u64 {
        self.records.iter().map(|r| r.elapsed_ns).sum()
    }

    /// Mean wall-clock nanoseconds per 1000 steps.
    pub fn ns_per_1000_steps(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.total_ns() as f64 * 1000.0 / self.records.len() as f64
    }
}

/// Median under the IEEE total order (NaNs sort last).
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => s[n / 2],
        _ => 0.5 * (s[n / 2 - 1] + s[n / 2]),
    }
}

/// Everything needed to continue a run bit for bit.
#[derive(Debug, Clone)]
pub struct VariationalState {
    pub lambda: Vec<f64>,
    pub index_map: IndexMap,
    pub optim: OptimState,
    pub step: u64,
    pub consecutive_skips: usize,
    pub skipped_total: u64,
    seed: u64,
    rng: ChaCha20Rng,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    assembly: Assembly,
    lambda: Vec<f64>,
    index_map: IndexMap,
    optim: OptimState,
    step: u64,
    consecutive_skips: usize,
    skipped_total: u64,
    seed: u64,
    /// `u128` does not survive every JSON reader, so it is kept as text.
    word_pos: String,
}

impl VariationalState {
    /// Initial state; `λ` is drawn from the stream that then drives the noise.
    pub fn new(assembly: &Assembly, optimizer: Optimizer, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let lambda = assembly.init(&mut rng);
        let n = lambda.len();
        VariationalState {
            lambda,
            index_map: assembly.index_map(),
            optim: OptimState::new(optimizer, n),
            step: 0,
            consecutive_skips: 0,
            skipped_total: 0,
            seed,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn to_json(&self, assembly: &Assembly) -> Result<String> {
        let c = Checkpoint {
            version: CHECKPOINT_VERSION,
            assembly: assembly.clone(),
            lambda: self.lambda.clone(),
            index_map: self.index_map.clone(),
            optim: self.optim.clone(),
            step: self.step,
            consecutive_skips: self.consecutive_skips,
            skipped_total: self.skipped_total,
            seed: self.seed,
            word_pos: self.rng.get_word_pos().to_string(),
        };
        serde_json::to_string(&c).map_err(|e| VcviError::Checkpoint(e.to_string()))
    }

    /// Restores a state and checks that it belongs to `assembly`.
    pub fn from_json(s: &str, assembly: &Assembly) -> Result<Self> {
        let bad = |m: String| VcviError::Checkpoint(m);
        let c: Checkpoint = serde_json::from_str(s).map_err(|e| bad(e.to_string()))?;
        if c.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {}", c.version)));
        }
        if &c.assembly != assembly {
            return Err(bad(format!("checkpoint is for {}, not {}", c.assembly.name, assembly.name)));
        }
        if c.index_map != assembly.index_map() || c.lambda.len() != assembly.n_params() || c.optim.a.len() != c.lambda.len() || c.optim.b.len() != c.lambda.len() {
            return Err(bad("parameter layout does not match the assembly".into()));
        }
        let word_pos: u128 = c.word_pos.parse().map_err(|_| bad(format!("bad RNG position {:?}", c.word_pos)))?;
        let mut rng = ChaCha20Rng::seed_from_u64(c.seed);
        rng.set_word_pos(word_pos);
        Ok(VariationalState {
            lambda: c.lambda,
            index_map: c.index_map,
            optim: c.optim,
            step: c.step,
            consecutive_skips: c.consecutive_skips,
            skipped_total: c.skipped_total,
            seed: c.seed,
            rng,
        })
    }

    pub fn save(&self, assembly: &Assembly, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json(assembly)?).map_err(|e| VcviError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path, assembly: &Assembly) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| VcviError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&s, assembly)
    }

    /// Runs `steps` more iterations. Non-finite estimates, gradients or
    /// updates skip the step; more than `MAX_CONSECUTIVE_SKIPS` in a row
    /// aborts with [`VcviError::Diverged`].
    pub fn advance(&mut self, assembly: &Assembly, target: &dyn Target, estimator: Estimator, steps: u64, trace: &mut ElboTrace) -> Result<()> {
        if self.lambda.len() != assembly.n_params() || target.dim() != assembly.dim() {
            return Err(dimension(format!(
                "state has {} parameters and target dimension {}; assembly expects {} and {}",
                self.lambda.len(),
                target.dim(),
                assembly.n_params(),
                assembly.dim()
            )));
        }
        for _ in 0..steps {
            let t0 = Instant::now();
            let noise = assembly.draw_noise(&mut self.rng);
            let (elbo, ok) = match assembly.elbo_gradient(&self.lambda, target, &noise, estimator) {
                Ok((v, g)) if v.is_finite() => (v, self.optim.step(&mut self.lambda, &g, &self.index_map)?),
                Ok((v, _)) => (v, false),
                Err(VcviError::Numerical(_) | VcviError::Domain(_)) => (f64::NAN, false),
                Err(e) => return Err(e),
            };
            self.step += 1;
            if ok {
                self.consecutive_skips = 0;
            } else {
                self.consecutive_skips += 1;
                self.skipped_total += 1;
            }
            trace.records.push(TraceRecord { step: self.step, elbo, elapsed_ns: t0.elapsed().as_nanos() as u64 });
            if self.consecutive_skips > MAX_CONSECUTIVE_SKIPS {
                return Err(VcviError::Diverged {
                    consecutive: self.consecutive_skips,
                    step: (self.step - self.consecutive_skips as u64) as usize,
                });
            }
        }
        Ok(())
    }
}

/// Fits `assembly` to `target` from a fresh state.
pub fn run_sgd(assembly: &Assembly, target: &dyn Target, config: &RunConfig) -> Result<(VariationalState, ElboTrace)> {
    if config.steps == 0 {
        return Err(spec("steps must be at least 1"));
    }
    let mut state = VariationalState::new(assembly, config.optimizer, config.seed);
    let mut trace = ElboTrace { records: Vec::with_capacity(config.steps as usize) };
    state.advance(assembly, target, config.estimator, config.steps, &mut trace)?;
    Ok((state, trace))
}

/// Monte Carlo mean of the single-draw estimate and its standard error.
pub fn elbo_mc(assembly: &Assembly, lambda: &[f64], target: &dyn Target, n: usize, seed: u64, par: Parallelism) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(spec("at least two draws are needed"));
    }
    let parts = map_chunks(par, n, MC_CHUNK, |r| -> Result<(f64, f64)> {
        let mut rng = chunk_rng(seed, r.start);
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in r {
            let v = assembly.elbo_estimate(lambda, target, &assembly.draw_noise(&mut rng))?;
            s += v;
            s2 += v * v;
        }
        Ok((s, s2))
    });
    let (mut s, mut s2) = (0.0, 0.0);
    for p in parts {
        let (a, b) = p?;
        s += a;
        s2 += b;
    }
    let nf = n as f64;
    let mean = s / nf;
    let var = ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0);
    Ok((mean, (var / nf).sqrt()))
}

/// `n` draws of `θ`, one per row.
pub fn sample_posterior(assembly: &Assembly, lambda: &[f64], n: usize, seed: u64, par: Parallelism) -> Result<DMatrix<f64>> {
    let d = assembly.dim();
    let parts = map_chunks(par, n, MC_CHUNK, |r| -> Result<Vec<Vec<f64>>> {
        let mut rng = chunk_rng(seed, r.start);
        r.map(|_| assembly.sample_theta(lambda, &assembly.draw_noise(&mut rng))).collect()
    });
    let mut out = DMatrix::zeros(n, d);
    let mut i = 0;
    for p in parts {
        for row in p? {
            for (j, v) in row.into_iter().enumerate() {
                out[(i, j)] = v;
            }
            i += 1;
        }
    }
    Ok(out)
}

fn chunk_rng(seed: u64, start: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream((start / MC_CHUNK) as u64 + 1);
    rng
}
