use nalgebra::DMatrix;

use crate::error::{check_len, invalid, Result, SparseError};
use crate::matrix::DesignMatrix;

/// Singular values below this many ulps of `σ_max · max(n, m)` are treated
/// as zero.
fn rank_cutoff(a: &DMatrix<f64>, sigma_max: f64) -> f64 {
    a.nrows().max(a.ncols()) as f64 * f64::EPSILON * sigma_max
}

/// Dense coefficient vector from a regression, plus a conditioning warning.
#[derive(Debug, Clone)]
pub struct RegressionFit {
    pub coeffs: Vec<f64>,
    pub warning: Option<String>,
}

/// Minimum-norm least squares `x = A⁺ b` as a reusable operator.
#[derive(Debug, Clone)]
pub struct L2Operator {
    pinv: DMatrix<f64>,
    warning: Option<String>,
}

impl L2Operator {
    pub fn new(a: &DesignMatrix) -> Result<Self> {
        let mat = a.as_dmatrix();
        let svd = mat.clone().svd(true, true);
        let sigma_max = svd.singular_values.max();
        let cutoff = rank_cutoff(mat, sigma_max);
        let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
        let sigma_min = svd
            .singular_values
            .iter()
            .copied()
            .filter(|&s| s > cutoff)
            .fold(f64::INFINITY, f64::min);
        let full = a.n().min(a.m());
        let warning = if rank < full {
            Some(format!(
                "rank {rank} < {full}: using the minimum-norm solution"
            ))
        } else if sigma_max / sigma_min > 1e12 {
            Some(format!(
                "ill-conditioned: condition number {:.3e}",
                sigma_max / sigma_min
            ))
        } else {
            None
        };
        let pinv = svd
            .pseudo_inverse(cutoff.max(f64::MIN_POSITIVE))
            .map_err(|e| SparseError::Diverged(e.to_string()))?;
        Ok(Self { pinv, warning })
    }

    pub fn warning(&self) -> Option<&str> {
        self.warning.as_deref()
    }

    pub fn apply(&self, b: &[f64]) -> Result<RegressionFit> {
        check_len("measurement vector", self.pinv.ncols(), b.len())?;
        Ok(RegressionFit {
            coeffs: (&self.pinv * DMatrix::from_column_slice(b.len(), 1, b))
                .as_slice()
                .to_vec(),
            warning: self.warning.clone(),
        })
    }
}

/// Ridge regression `x = argmin ½‖b − Ax‖² + (λ/2)‖x‖²` as a reusable
/// operator. `λ = 0` falls back to the pseudo-inverse.
#[derive(Debug, Clone)]
pub struct RidgeOperator {
    w: DMatrix<f64>,
    warning: Option<String>,
}

impl RidgeOperator {
    pub fn new(a: &DesignMatrix, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(invalid(format!(
                "ridge lambda must be non-negative, got {lambda}"
            )));
        }
        if lambda == 0.0 {
            let l2 = L2Operator::new(a)?;
            return Ok(Self {
                w: l2.pinv,
                warning: l2.warning,
            });
        }
        let mat = a.as_dmatrix();
        let w = if a.m() <= a.n() {
            let mut g = mat.tr_mul(mat);
            for i in 0..a.m() {
                g[(i, i)] += lambda;
            }
            let chol = g
                .cholesky()
                .ok_or_else(|| SparseError::Diverged("ridge Gram not positive definite".into()))?;
            chol.solve(&mat.transpose())
        } else {
            let mut g = mat * mat.transpose();
            for i in 0..a.n() {
                g[(i, i)] += lambda;
            }
            let chol = g
                .cholesky()
                .ok_or_else(|| SparseError::Diverged("ridge Gram not positive definite".into()))?;
            mat.transpose() * chol.inverse()
        };
        Ok(Self { w, warning: None })
    }

    pub fn apply(&self, b: &[f64]) -> Result<RegressionFit> {
        check_len("measurement vector", self.w.ncols(), b.len())?;
        Ok(RegressionFit {
            coeffs: (&self.w * DMatrix::from_column_slice(b.len(), 1, b))
                .as_slice()
                .to_vec(),
            warning: self.warning.clone(),
        })
    }
}

/// One-shot minimum-norm least squares.
pub fn l2_fit(a: &DesignMatrix, b: &[f64]) -> Result<RegressionFit> {
    L2Operator::new(a)?.apply(b)
}

/// One-shot ridge regression.
pub fn l2l2_fit(a: &DesignMatrix, b: &[f64], ridge_lambda: f64) -> Result<RegressionFit> {
    RidgeOperator::new(a, ridge_lambda)?.apply(b)
}
