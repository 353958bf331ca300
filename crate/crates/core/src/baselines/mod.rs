//! Comparison solvers: OMP, subspace pursuit, OMPR / OMPRA, normalized IHT,
//! full-problem proximal-gradient LASSO and the dense L2 / L2-L2 regressions.

mod lasso;
mod niht;
mod omp;
mod ompr;
mod regression;
mod sp;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::lstsq;
use crate::matrix::DesignMatrix;
use crate::solution::SparseSolution;
use crate::trace::SolveTrace;

pub use lasso::{pg_lasso_full, LassoResult};
pub use niht::niht_solve;
pub use omp::omp_solve;
pub use ompr::ompr_solve;
pub use regression::{l2_fit, l2l2_fit, L2Operator, RegressionFit, RidgeOperator};
pub use sp::sp_solve;

/// Settings shared by the sparsity-parameterized baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    /// Sparsity estimate k̂.
    pub k_hat: usize,
    /// OMPR gradient step.
    pub eta: f64,
    /// Choose the OMPR step by exact line search (OMPRA).
    pub adaptive_eta: bool,
    /// Ridge weight for L2-L2.
    pub ridge_lambda: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            k_hat: 1,
            eta: 0.7,
            adaptive_eta: false,
            ridge_lambda: 1e-3,
            max_iter: 300,
            tol: 1e-10,
        }
    }
}

impl BaselineConfig {
    pub fn with_k_hat(k_hat: usize) -> Self {
        Self {
            k_hat,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_hat == 0 {
            return Err(invalid("k_hat must be at least 1"));
        }
        if !(self.eta > 0.0) {
            return Err(invalid("eta must be positive"));
        }
        if !(self.ridge_lambda >= 0.0) {
            return Err(invalid("ridge_lambda must be non-negative"));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be positive"));
        }
        Ok(())
    }
}

/// Output of a greedy / thresholding solver.
#[derive(Debug, Clone)]
pub struct GreedyResult {
    pub solution: SparseSolution,
    /// One entry per iteration with objective `½‖b − Ax‖²`.
    pub trace: SolveTrace,
    /// A least-squares refit met a rank-deficient support.
    pub degenerate: bool,
}

impl GreedyResult {
    pub(crate) fn empty(m: usize, trace: SolveTrace) -> Self {
        Self {
            solution: SparseSolution::zeros(m),
            trace,
            degenerate: false,
        }
    }
}

/// Least-squares coefficients on the columns `idx` (minimum norm when the
/// columns are dependent) and the residual they leave.
pub(crate) fn refit(a: &DesignMatrix, b: &[f64], idx: &[usize]) -> (Vec<f64>, Vec<f64>, bool) {
    if idx.is_empty() {
        return (Vec::new(), b.to_vec(), false);
    }
    let sub: DMatrix<f64> = a.select_columns(idx);
    let (x, degenerate) = lstsq(&sub, b);
    let ax = a.combine(idx, &x);
    let r = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    (x, r, degenerate)
}

/// Indices of the `k` largest `|v_i|` (ties to the lower index), in that
/// order. Exact zeros are never selected.
pub(crate) fn top_k(v: &[f64], k: usize) -> Vec<usize> {
    crate::gmp::select_top(v, &vec![false; v.len()], k, 0.0)
}

pub(crate) fn check_k_hat(a: &DesignMatrix, b: &[f64], k_hat: usize, limit: usize) -> Result<()> {
    crate::error::check_len("measurement vector", a.n(), b.len())?;
    if k_hat == 0 || k_hat > limit {
        return Err(invalid(format!("k_hat = {k_hat} must lie in [1, {limit}]")));
    }
    Ok(())
}
