//! Run configuration: a TOML file with `[target]`, `[va]`, `[optimizer]` and
//! `[output]` sections. Every field is optional.
//!
//! ```toml
//! [target]
//! model = "logistic-horseshoe"  # the only model
//! dataset = "data/sim.csv"      # relative to the config file; omit to simulate
//! format = "csv"                # csv | libsvm, default from the extension
//! n_features = 10               # LIBSVM width, default the largest index
//! n = 200                       # simulation: rows
//! m = 20                        # simulation: features
//! sparsity = 0.2                # simulation: fraction of nonzero β
//! data_seed = 1                 # simulation: seed
//!
//! [va]
//! family = "GMF"
//!
//! [optimizer]
//! method = "adam"               # adam | adadelta
//! lr = 0.01                     # adam
//! beta1 = 0.9                   # adam
//! beta2 = 0.999                 # adam
//! eps = 1e-8                    # default 1e-8 for adam, 1e-6 for adadelta
//! rho = 0.95                    # adadelta
//! estimator = "path"            # path | total
//! steps = 40000
//! window = 1000                 # summary window, default min(1000, steps)
//! seed = 1
//!
//! [output]
//! dir = "runs/gmf"              # default $VCVI_OUTPUT_ROOT/<hash prefix>
//! checkpoint = true
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vcvi_core::engine::{Assembly, Estimator, Optimizer, RunConfig, DEFAULT_STEPS, DEFAULT_WINDOW};
use vcvi_core::targets::{simulate_logistic_dataset, Design, LogisticHorseshoe};

use crate::ingest::{read_path, DataFormat, Dataset};
use crate::CliError;

pub const MODEL: &str = "logistic-horseshoe";
pub const OUTPUT_ROOT_ENV: &str = "VCVI_OUTPUT_ROOT";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub target: TargetConfig,
    pub va: VaConfig,
    pub optimizer: OptimizerConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub model: String,
    pub dataset: Option<PathBuf>,
    pub format: Option<DataFormat>,
    pub n_features: Option<usize>,
    pub n: usize,
    pub m: usize,
    pub sparsity: f64,
    pub data_seed: u64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig { model: MODEL.into(), dataset: None, format: None, n_features: None, n: 200, m: 20, sparsity: 0.2, data_seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaConfig {
    pub family: String,
}

impl Default for VaConfig {
    fn default() -> Self {
        VaConfig { family: "GMF".into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Adam,
    Adadelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub method: Method,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: Option<f64>,
    pub rho: f64,
    pub estimator: Estimator,
    pub steps: u64,
    /// Defaults to `min(1000, steps)`.
    pub window: Option<usize>,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            method: Method::Adam,
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: None,
            rho: 0.95,
            estimator: Estimator::default(),
            steps: DEFAULT_STEPS,
            window: None,
            seed: 1,
        }
    }
}

impl OptimizerConfig {
    pub fn optimizer(&self) -> Optimizer {
        match self.method {
            Method::Adam => Optimizer::Adam { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps.unwrap_or(1e-8) },
            Method::Adadelta => Optimizer::Adadelta { rho: self.rho, eps: self.eps.unwrap_or(1e-6) },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub checkpoint: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: None, checkpoint: true }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<u64>,
    pub out: Option<PathBuf>,
    pub family: Option<String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Invalid(format!("config: {}", e.message())))
    }

    /// Loads `path` and rewrites a relative dataset path against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        let mut cfg = Config::parse(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        if let Some(ds) = &cfg.target.dataset {
            if ds.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.target.dataset = Some(base.join(ds));
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.optimizer.seed = s;
        }
        if let Some(s) = o.steps {
            self.optimizer.steps = s;
        }
        if let Some(d) = &o.out {
            self.output.dir = Some(d.clone());
        }
        if let Some(f) = &o.family {
            self.va.family = f.clone();
        }
    }

    /// Checks every field, loads or simulates the data and resolves the
    /// family. Nothing is written.
    pub fn prepare(&self) -> Result<Prepared, CliError> {
        let t = &self.target;
        if t.model != MODEL {
            return Err(CliError::Invalid(format!("target.model: unknown model '{}', expected '{MODEL}'", t.model)));
        }
        let (data, data_key) = load_target_data(t)?;
        let target = LogisticHorseshoe::new(data.x.clone(), data.y.clone()).map_err(|e| CliError::Invalid(format!("target: {e}")))?;
        let assembly = Assembly::from_family(&self.va.family, &target.blocks())
            .map_err(|e| CliError::Invalid(format!("va.family: {e}")))?;

        let o = &self.optimizer;
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CliError::Invalid(format!("optimizer.{name} must be positive, got {v}")))
            }
        };
        match o.method {
            Method::Adam => {
                positive("lr", o.lr)?;
                for (name, b) in [("beta1", o.beta1), ("beta2", o.beta2)] {
                    if !(0.0..1.0).contains(&b) {
                        return Err(CliError::Invalid(format!("optimizer.{name} must lie in [0, 1), got {b}")));
                    }
                }
            }
            Method::Adadelta => {
                if !(0.0..1.0).contains(&o.rho) {
                    return Err(CliError::Invalid(format!("optimizer.rho must lie in [0, 1), got {}", o.rho)));
                }
            }
        }
        if let Some(e) = o.eps {
            positive("eps", e)?;
        }
        if o.steps == 0 {
            return Err(CliError::Invalid("optimizer.steps must be at least 1".into()));
        }
        let window = o.window.unwrap_or(DEFAULT_WINDOW.min(o.steps as usize));
        if window == 0 || window as u64 > o.steps {
            return Err(CliError::Invalid(format!("optimizer.window must lie in 1..={}, got {window}", o.steps)));
        }
        let run = RunConfig { steps: o.steps, seed: o.seed, optimizer: o.optimizer(), estimator: o.estimator, window };
        let hash = config_hash(&data_key, &self.va.family, &run);
        Ok(Prepared { config: self.clone(), n: data.n(), m: data.m(), density: data.density(), target, assembly, run, hash })
    }
}

fn load_target_data(t: &TargetConfig) -> Result<(Dataset, serde_json::Value), CliError> {
    match &t.dataset {
        Some(path) => {
            let format = t
                .format
                .or_else(|| DataFormat::from_path(path))
                .ok_or_else(|| CliError::Invalid(format!("target.format: cannot infer the format of {}", path.display())))?;
            let bytes = std::fs::read(path).map_err(|e| CliError::Invalid(format!("target.dataset {}: {e}", path.display())))?;
            let data = read_path(path, format, t.n_features).map_err(|e| CliError::Invalid(format!("target.dataset: {e}")))?;
            let key = serde_json::json!({
                "model": t.model,
                "dataset_sha256": hex::encode(Sha256::digest(&bytes)),
                "format": format,
                "n_features": data.m(),
            });
            Ok((data, key))
        }
        None => {
            if t.n == 0 || t.m == 0 {
                return Err(CliError::Invalid(format!("target: simulation needs n ≥ 1 and m ≥ 1, got n={} m={}", t.n, t.m)));
            }
            let sim = simulate_logistic_dataset(t.n, t.m, t.sparsity, t.data_seed)
                .map_err(|e| CliError::Invalid(format!("target.sparsity: {e}")))?;
            let key = serde_json::json!({
                "model": t.model,
                "n": t.n,
                "m": t.m,
                "sparsity": t.sparsity,
                "data_seed": t.data_seed,
            });
            Ok((Dataset { x: Design::auto(sim.x), y: sim.y }, key))
        }
    }
}

/// SHA-256 over the fields that change results: the data (by content), the
/// family and the resolved optimizer settings. Output settings are excluded.
pub fn config_hash(data_key: &serde_json::Value, family: &str, run: &RunConfig) -> String {
    let family: String = family.chars().filter(|c| !c.is_whitespace()).collect();
    let canon = serde_json::json!({ "target": data_key, "family": family, "run": run });
    hex::encode(Sha256::digest(canon.to_string().as_bytes()))
}

/// A validated configuration with its target and family built.
pub struct Prepared {
    pub config: Config,
    pub n: usize,
    pub m: usize,
    pub density: f64,
    pub target: LogisticHorseshoe,
    pub assembly: Assembly,
    pub run: RunConfig,
    pub hash: String,
}

impl Prepared {
    /// `[output].dir`, else `$VCVI_OUTPUT_ROOT/<first 12 hash digits>`, else
    /// `vcvi-out/<…>` in the working directory.
    pub fn output_dir(&self) -> PathBuf {
        if let Some(d) = &self.config.output.dir {
            return d.clone();
        }
        let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("vcvi-out"));
        root.join(&self.hash[..12])
    }

    /// Whether two configurations describe the same target.
    pub fn same_target(&self, other: &Prepared) -> bool {
        let a = &self.config.target;
        let b = &other.config.target;
        match (&a.dataset, &b.dataset) {
            (Some(_), Some(_)) => self.target.design() == other.target.design() && self.target.labels() == other.target.labels(),
            (None, None) => a.n == b.n && a.m == b.m && a.sparsity == b.sparsity && a.data_seed == b.data_seed,
            _ => false,
        }
    }
}
