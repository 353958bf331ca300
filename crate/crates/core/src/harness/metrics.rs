use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Result};
use crate::inner::debias;
use crate::linalg::norm_inf;
use crate::matrix::{correlate, DesignMatrix};
use crate::solution::{Residual, SparseSolution};

/// A trial succeeds when the de-biased estimate is within this relative
/// ℓ2 distance of the ground truth.
pub const SUCCESS_THRESHOLD: f64 = 1e-3;

fn dense_diff_sq(x: &SparseSolution, y: &SparseSolution) -> f64 {
    x.to_dense()
        .iter()
        .zip(y.to_dense())
        .map(|(p, q)| (p - q).powi(2))
        .sum()
}

/// `‖x_rec − x_true‖ / ‖x_true‖` (absolute error when `x_true = 0`).
pub fn relative_error(x_rec: &SparseSolution, x_true: &SparseSolution) -> Result<f64> {
    check_len("recovered signal length", x_true.m(), x_rec.m())?;
    let err = dense_diff_sq(x_rec, x_true).sqrt();
    let scale = x_true.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(if scale > 0.0 { err / scale } else { err })
}

/// `‖x_rec − x_true‖² / m`.
pub fn mse(x_rec: &SparseSolution, x_true: &SparseSolution) -> Result<f64> {
    check_len("recovered signal length", x_true.m(), x_rec.m())?;
    Ok(dense_diff_sq(x_rec, x_true) / x_true.m() as f64)
}

/// Scoring of one recovered signal.
#[derive(Debug, Clone)]
pub struct Recovery {
    /// The estimate after least-squares refitting on its support.
    pub debiased: SparseSolution,
    pub relative_error: f64,
    pub mse: f64,
    pub success: bool,
    /// `‖b − A x̂‖` for the de-biased estimate.
    pub residual: f64,
}

/// De-biases `x_rec` and scores it against `x_true`. Supports larger than
/// `n` admit no unique refit and are scored as given.
pub fn evaluate_recovery(
    a: &DesignMatrix,
    b: &[f64],
    x_rec: &SparseSolution,
    x_true: &SparseSolution,
) -> Result<Recovery> {
    let debiased = if x_rec.is_empty() || x_rec.nnz() > a.n() {
        x_rec.clone()
    } else {
        debias(a, b, x_rec)?.0.finalize()
    };
    let rel = relative_error(&debiased, x_true)?;
    Ok(Recovery {
        residual: crate::matrix::residual(a, b, &debiased)?.norm(),
        mse: mse(&debiased, x_true)?,
        success: rel <= SUCCESS_THRESHOLD,
        relative_error: rel,
        debiased,
    })
}

/// One (solver, k, trial) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub solver: String,
    pub k: usize,
    pub n: usize,
    pub m: usize,
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    pub mse: f64,
    pub residual: f64,
    pub sparsity_out: usize,
    pub wall_ms: f64,
    /// Solver error message, if the solve failed.
    pub error: Option<String>,
}

/// Fraction of successful trials in one (solver, k) cell.
pub fn epsr(records: &[TrialRecord]) -> Result<f64> {
    let first = records
        .first()
        .ok_or_else(|| invalid("epsr needs at least one record"))?;
    if records
        .iter()
        .any(|r| r.solver != first.solver || r.k != first.k)
    {
        return Err(invalid("epsr records span more than one (solver, k) cell"));
    }
    let hits = records.iter().filter(|r| r.success).count();
    Ok(hits as f64 / records.len() as f64)
}

/// How `n / (r ln m)` becomes an integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    #[default]
    Ceil,
    Nearest,
}

/// Atoms per outer iteration: `n / (r ln m)` rounded, at least 1.
pub fn default_rho(n: usize, m: usize, r: f64, rounding: Rounding) -> Result<usize> {
    if !(r >= 3.0) {
        return Err(invalid(format!("r must be at least 3, got {r}")));
    }
    if n == 0 || m < 2 {
        return Err(invalid(format!(
            "need n >= 1 and m >= 2, got n = {n}, m = {m}"
        )));
    }
    let raw = n as f64 / (r * (m as f64).ln());
    let rho = match rounding {
        Rounding::Ceil => raw.ceil(),
        Rounding::Nearest => raw.round(),
    };
    Ok((rho as usize).max(1))
}

/// Atoms per outer iteration when the sparsity is known: `k / r` rounded,
/// at least 1.
pub fn rho_from_sparsity(k: usize, r: f64, rounding: Rounding) -> Result<usize> {
    if !(r >= 6.0) {
        return Err(invalid(format!("r must be at least 6, got {r}")));
    }
    let raw = k as f64 / r;
    let rho = match rounding {
        Rounding::Ceil => raw.ceil(),
        Rounding::Nearest => raw.round(),
    };
    Ok((rho as usize).max(1))
}

/// `0.005 ‖Aᵀb‖_∞`.
pub fn default_lambda(a: &DesignMatrix, b: &[f64]) -> Result<f64> {
    let g = correlate(a, &Residual::new(b.to_vec()))?;
    Ok(0.005 * norm_inf(&g))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(solver: &str, k: usize, success: bool) -> TrialRecord {
        TrialRecord {
            solver: solver.into(),
            k,
            n: 1,
            m: 1,
            trial: 0,
            seed: 0,
            success,
            mse: 0.0,
            residual: 0.0,
            sparsity_out: 0,
            wall_ms: 0.0,
            error: None,
        }
    }

    #[test]
    fn epsr_fractions() {
        let all: Vec<_> = (0..4).map(|_| record("gmp", 3, true)).collect();
        assert_eq!(epsr(&all).unwrap(), 1.0);
        let none: Vec<_> = (0..4).map(|_| record("gmp", 3, false)).collect();
        assert_eq!(epsr(&none).unwrap(), 0.0);
        let some: Vec<_> = (0..100).map(|i| record("gmp", 3, i < 73)).collect();
        assert_eq!(epsr(&some).unwrap(), 0.73);
        assert!(epsr(&[]).is_err());
        assert!(epsr(&[record("gmp", 3, true), record("omp", 3, true)]).is_err());
        assert!(epsr(&[record("gmp", 3, true), record("gmp", 4, true)]).is_err());
    }

    #[test]
    fn rho_rules() {
        assert_eq!(default_rho(1024, 8192, 4.0, Rounding::Ceil).unwrap(), 29);
        assert_eq!(default_rho(1024, 8192, 4.0, Rounding::Nearest).unwrap(), 28);
        assert_eq!(default_rho(2, 8192, 3.0, Rounding::Ceil).unwrap(), 1);
        assert_eq!(default_rho(2, 8192, 3.0, Rounding::Nearest).unwrap(), 1);
        assert_eq!(default_rho(1024, 8192, 1e12, Rounding::Ceil).unwrap(), 1);
        assert!(default_rho(10, 10, 2.0, Rounding::Ceil).is_err());
    }

    #[test]
    fn lambda_rule() {
        let a = DesignMatrix::identity(2);
        assert_eq!(default_lambda(&a, &[0.0, 0.0]).unwrap(), 0.0);
        assert!((default_lambda(&a, &[2.0, -4.0]).unwrap() - 0.02).abs() < 1e-17);
        let l1 = default_lambda(&a, &[2.0, -4.0]).unwrap();
        let l3 = default_lambda(&a, &[6.0, -12.0]).unwrap();
        assert!((l3 - 3.0 * l1).abs() < 1e-15);
    }

    #[test]
    fn recovery_scoring() {
        let a = DesignMatrix::identity(3);
        let truth = SparseSolution::new(3, vec![1], vec![2.0]).unwrap();
        let shrunk = SparseSolution::new(3, vec![1], vec![1.5]).unwrap();
        let r = evaluate_recovery(&a, &[0.0, 2.0, 0.0], &shrunk, &truth).unwrap();
        assert!(r.success);
        assert!(r.residual < 1e-9);
        let empty =
            evaluate_recovery(&a, &[0.0, 2.0, 0.0], &SparseSolution::zeros(3), &truth).unwrap();
        assert!(!empty.success);
        assert_eq!(empty.relative_error, 1.0);
        assert!((empty.mse - 4.0 / 3.0).abs() < 1e-15);
    }
}
