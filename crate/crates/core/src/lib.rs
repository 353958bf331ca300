//! Sparse recovery by general matching pursuit.
//!
//! The crate provides the GMP family of greedy-plus-convex solvers
//! ([`gmp::gmp_solve`], [`gmp::sgmp_solve`], [`batch::bgmp_solve`]), the
//! restricted master-problem solvers they dispatch to ([`inner`]), a set of
//! comparison solvers ([`baselines`]), an experiment harness for recovery
//! sweeps ([`harness`]) and sparse-representation classification
//! ([`src_classifier`]).
//!
//! All arithmetic is `f64`. Dictionaries are dense and column-major.

pub mod baselines;
pub mod batch;
pub mod config;
pub mod error;
pub mod gmp;
pub mod harness;
pub mod inner;
pub mod io;
pub mod linalg;
pub mod matrix;
pub mod par;
pub mod solution;
pub mod src_classifier;
pub mod trace;

pub use config::GmpConfig;
pub use error::{Result, SparseError};
pub use gmp::{gmp_solve, sgmp_solve, StopRule};
pub use matrix::{correlate, matvec, objective, DesignMatrix};
pub use par::Execution;
pub use solution::{Residual, SparseSolution};
pub use trace::{SolveStatus, SolveTrace, StopKind};
