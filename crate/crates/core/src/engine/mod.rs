//! Assemblies of copula and marginal maps, the ELBO and its optimization.

pub mod assembly;
pub mod elbo;
pub mod optim;
pub mod run;

pub use assembly::{Assembly, Noise};
pub use elbo::Estimator;
pub use optim::{OptimState, Optimizer};
pub use run::{
    elbo_mc, median, run_sgd, sample_posterior, ElboTrace, RunConfig, TraceRecord, VariationalState, DEFAULT_STEPS, DEFAULT_WINDOW,
    MAX_CONSECUTIVE_SKIPS,
};
