use std::time::Instant;

use super::GreedyResult;
use crate::error::{check_len, invalid, Result};
use crate::gmp::{check_stop_values, select_top, StopRule};
use crate::inner::{cgd_minimize, DenseRestricted, InnerOptions};
use crate::linalg::{dot, norm2_sq, norm_inf, GrowingCholesky};
use crate::matrix::DesignMatrix;
use crate::par::Execution;
use crate::solution::SparseSolution;
use crate::trace::{SolveStatus, SolveTrace};

/// Orthogonal matching pursuit: add the atom with the largest `|a_jᵀr|`,
/// refit all coefficients by least squares, repeat. Stops after
/// `max_atoms` atoms, when a stop rule fires, or when every correlation is
/// exactly zero. Refits use a Cholesky factor of `A_IᵀA_I` grown one atom at
/// a time; a dependent atom switches to CGD refits and sets `degenerate`.
pub fn omp_solve(
    a: &DesignMatrix,
    b: &[f64],
    max_atoms: usize,
    stops: &[StopRule],
) -> Result<GreedyResult> {
    check_len("measurement vector", a.n(), b.len())?;
    if max_atoms == 0 {
        return Err(invalid("omp_solve needs max_atoms >= 1"));
    }
    let m = a.m();
    let mut trace = SolveTrace::new(0.5 * norm2_sq(b));
    if trace.theta0 == 0.0 {
        trace.status = SolveStatus::ZeroSignal;
        return Ok(GreedyResult::empty(m, trace));
    }
    let mut atb = vec![0.0; m];
    a.correlate_into(b, &mut atb, Execution::Parallel);
    let mut g = atb.clone();
    let mut mask = vec![false; m];
    let mut idx: Vec<usize> = Vec::new();
    let mut x: Vec<f64> = Vec::new();
    let mut chol = GrowingCholesky::new();
    let mut degenerate = false;
    trace.status = SolveStatus::Capped;

    while idx.len() < max_atoms.min(m) {
        let started = Instant::now();
        let Some(&j) = select_top(&g, &mask, 1, 0.0).first() else {
            trace.status = SolveStatus::Optimal;
            break;
        };
        mask[j] = true;
        if !degenerate {
            let cross: Vec<f64> = idx.iter().map(|&i| dot(a.column(i), a.column(j))).collect();
            degenerate = !chol.push(&cross, a.col_norm(j).powi(2));
        }
        idx.push(j);
        x = if degenerate {
            let mut warm = x.clone();
            warm.push(0.0);
            let opts = InnerOptions {
                max_iter: 20 * idx.len() + 100,
                tol: 1e-10,
                lipschitz: None,
            };
            cgd_minimize(&DenseRestricted::new(a, b, &idx), &warm, opts)?.u
        } else {
            let rhs: Vec<f64> = idx.iter().map(|&i| atb[i]).collect();
            chol.solve(&rhs)
        };
        let r = DenseRestricted::new(a, b, &idx).residual(&x);
        a.correlate_into(&r, &mut g, Execution::Parallel);
        trace.correlation_flops += 2 * (a.n() * m) as u64;
        let res_sq = norm2_sq(&r);
        trace.record(
            0.5 * res_sq,
            idx.len(),
            1,
            started.elapsed().as_secs_f64() * 1e3,
            vec![j],
            None,
        );
        if let Some(kind) = check_stop_values(&trace, res_sq.sqrt(), norm_inf(&g), stops) {
            trace.status = SolveStatus::Stopped(kind);
            break;
        }
    }
    trace.degenerate = degenerate;
    Ok(GreedyResult {
        solution: SparseSolution::new(m, idx, x)?.finalize(),
        trace,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_recovers_support_in_nnz_steps() {
        let a = DesignMatrix::identity(5);
        let b = [0.0, 3.0, 0.0, -1.0, 0.0];
        let r = omp_solve(&a, &b, 5, &[]).unwrap();
        assert_eq!(r.solution.support(), &[1, 3]);
        assert_eq!(r.solution.values(), &[3.0, -1.0]);
        assert_eq!(r.trace.outer_iterations(), 2);
        assert_eq!(r.trace.selection_order(), vec![1, 3]);
    }

    #[test]
    fn zero_signal_is_empty() {
        let a = DesignMatrix::identity(3);
        let r = omp_solve(&a, &[0.0; 3], 3, &[]).unwrap();
        assert!(r.solution.is_empty());
        assert!(omp_solve(&a, &[1.0; 3], 0, &[]).is_err());
    }

    #[test]
    fn duplicate_column_is_flagged() {
        let a = DesignMatrix::from_col_major(2, 3, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let r = omp_solve(&a, &[2.0, 1.0], 3, &[]).unwrap();
        let res = crate::matrix::residual(&a, &[2.0, 1.0], &r.solution).unwrap();
        assert!(res.norm() < 1e-9);
    }
}
