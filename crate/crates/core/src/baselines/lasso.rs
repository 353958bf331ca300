use crate::error::{check_len, invalid, Result};
use crate::inner::{pg_minimize, DenseRestricted, InnerOptions};
use crate::matrix::DesignMatrix;
use crate::solution::SparseSolution;

/// Result of a full-dimensional LASSO solve.
#[derive(Debug, Clone)]
pub struct LassoResult {
    pub solution: SparseSolution,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
}

/// Proximal gradient on `λ‖x‖₁ + ½‖b − Ax‖²` over all `m` coordinates,
/// started from zero. Converged means the generalized gradient fell to `tol`
/// in the sup norm (or no further representable decrease exists).
pub fn pg_lasso_full(
    a: &DesignMatrix,
    b: &[f64],
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<LassoResult> {
    check_len("measurement vector", a.n(), b.len())?;
    if !(lambda > 0.0) {
        return Err(invalid(format!("lambda must be positive, got {lambda}")));
    }
    if !(tol > 0.0) {
        return Err(invalid("tol must be positive"));
    }
    let idx: Vec<usize> = (0..a.m()).collect();
    let problem = DenseRestricted::new(a, b, &idx);
    let state = pg_minimize(
        &problem,
        lambda,
        &vec![0.0; a.m()],
        InnerOptions {
            max_iter,
            tol,
            lipschitz: None,
        },
    )?;
    Ok(LassoResult {
        solution: SparseSolution::from_dense(&state.u).finalize(),
        iterations: state.iterations,
        converged: state.converged,
        objective: state.objective,
    })
}
