//! RBF kernel, Gram assembly and the dual QP solver with per-sample bounds.

mod kernel;
mod kkt;
mod smo;

pub use kernel::{gram_matrix, gram_matrix_serial, rbf, KernelParams};
pub(crate) use kernel::rbf_unchecked;
pub use kkt::{kkt_report, KktReport};
pub use smo::{
    compute_bias, default_max_passes, solve_dual, solve_dual_traced, DualSolution, QpProblem,
    DEFAULT_TOLERANCE, MIN_MAX_PASSES,
};
