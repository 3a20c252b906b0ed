//! Variational inference with vector copulas: dependent block posterior
//! approximations built from Gaussian and Kendall vector copulas coupled with
//! learnable transport-map marginals.

pub mod error;
pub mod engine;
pub mod copulas;
pub mod kernels;
pub mod layout;
pub mod maps;
pub mod parallel;
pub mod oracles;
pub mod targets;

pub use error::{Result, VcviError};
