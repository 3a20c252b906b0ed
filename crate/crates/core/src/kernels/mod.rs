//! Scalar and matrix primitives shared by the maps, copulas and engine.

pub mod erlang;
pub mod lowrank;
pub mod normal;
pub mod stiefel;
pub mod triangular;

pub use erlang::{erlang_cdf, erlang_ln_pdf, erlang_quantile, erlang_sf, kendall_cdf, kendall_from_neg_log};
pub use lowrank::{cholesky_rank1_updates, woodbury_inverse_apply, FactorScale, FactorSolver};
pub use normal::{normal_cdf, normal_log_pdf, normal_pdf, normal_quantile, normal_quantile_upper, normal_sf, z_max};
pub use triangular::{banded_unit_lower_solve, LowerTriangular, TriPattern};
