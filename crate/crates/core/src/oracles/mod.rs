//! Independent checks: finite differences, reference sampling,
//! distributional tests and the closed-form Gaussian ELBO.

pub mod fd;
pub mod gaussian;
pub mod rwm;
pub mod stats;

pub use fd::{check_gradient, finite_diff_gradient, rel_error, GradCheckReport};
pub use gaussian::{gaussian_elbo, gaussian_elbo_closed_form};
pub use rwm::{rwm_sample, McmcChain};
pub use stats::{average_ranks, empirical_corr, ks_critical_5pct, ks_uniform_test, spearman_corr};
