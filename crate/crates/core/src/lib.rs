//! Kernel SVM whose dual box constraints encode domain knowledge.
//!
//! Samples are split into three regions: positives where a domain rule fires
//! (R1), remaining positives (R2) and negatives (R3). Each region gets its own
//! misclassification cost, which becomes a per-sample upper bound on the dual
//! multipliers. The crate also carries the tooling around it: lagged process
//! features, silicon banding, cross-validated grid search, evaluation
//! metrics, a synthetic furnace generator and the repeated-split experiment.
//!
//! The numerical core ([`kernel_qp`], [`wsvm`]) is generic over [`Scalar`];
//! the aliases below fix it to `f64`.

pub mod data_io;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod kernel_qp;
pub mod knowledge;
mod label;
pub mod pipeline;
mod scalar;
pub mod select;
pub mod wsvm;

pub use error::{Error, Result, SolveError};
pub use label::Label;
pub use scalar::Scalar;

pub type Kernel = kernel_qp::KernelParams<f64>;
pub type Problem = kernel_qp::QpProblem<f64>;
pub type Solution = kernel_qp::DualSolution<f64>;
pub type Scheme = wsvm::PenaltyScheme<f64>;
pub type Model = wsvm::TrainedModel<f64>;
pub type LabeledSample = pipeline::Sample<f64>;
