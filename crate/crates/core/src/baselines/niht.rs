use super::{check_k_hat, top_k, BaselineConfig, GreedyResult};
use crate::error::Result;
use crate::linalg::{norm2, norm2_sq};
use crate::matrix::DesignMatrix;
use crate::par::Execution;
use crate::solution::SparseSolution;
use crate::trace::{SolveStatus, SolveTrace};

const MAX_HALVINGS: usize = 40;

/// Normalized iterative hard thresholding, standing in for accelerated IHT.
///
/// `x⁺ = H_k̂(x + μ Aᵀ(b − Ax))` with `μ = ‖g_S‖² / ‖A_S g_S‖²` computed on
/// the current support `S`. The step is halved until the residual does not
/// grow, so the objective is monotone; the solve ends when the support is
/// stable and the iterate moves less than `cfg.tol` relative, when no step
/// decreases the residual, or at `cfg.max_iter`.
pub fn niht_solve(a: &DesignMatrix, b: &[f64], cfg: &BaselineConfig) -> Result<GreedyResult> {
    cfg.validate()?;
    let k_hat = cfg.k_hat;
    check_k_hat(a, b, k_hat, a.m())?;
    let m = a.m();
    let mut trace = SolveTrace::new(0.5 * norm2_sq(b));
    if trace.theta0 == 0.0 {
        trace.status = SolveStatus::ZeroSignal;
        return Ok(GreedyResult::empty(m, trace));
    }
    let mut x = vec![0.0; m];
    let mut r = b.to_vec();
    let mut res = norm2_sq(&r);
    let mut g = vec![0.0; m];
    let mut support: Vec<usize> = Vec::new();
    trace.status = SolveStatus::MaxOuter;

    for _ in 0..cfg.max_iter {
        a.correlate_into(&r, &mut g, Execution::Parallel);
        let basis = if support.is_empty() {
            top_k(&g, k_hat)
        } else {
            support.clone()
        };
        let gs: Vec<f64> = basis.iter().map(|&j| g[j]).collect();
        let num = norm2_sq(&gs);
        let den = norm2_sq(&a.combine(&basis, &gs));
        if num == 0.0 || den == 0.0 {
            trace.status = SolveStatus::Optimal;
            break;
        }
        let mut mu = num / den;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let z: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi + mu * gi).collect();
            let mut next = top_k(&z, k_hat);
            next.sort_unstable();
            let coeffs: Vec<f64> = next.iter().map(|&j| z[j]).collect();
            let ax = a.combine(&next, &coeffs);
            let nr: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            let nres = norm2_sq(&nr);
            if nres <= res {
                accepted = Some((next, coeffs, nr, nres));
                break;
            }
            mu *= 0.5;
        }
        let Some((next, coeffs, nr, nres)) = accepted else {
            trace.status = SolveStatus::Optimal;
            break;
        };
        let mut nx = vec![0.0; m];
        for (&j, &c) in next.iter().zip(&coeffs) {
            nx[j] = c;
        }
        let moved: f64 = nx
            .iter()
            .zip(&x)
            .map(|(p, q)| (p - q).powi(2))
            .sum::<f64>()
            .sqrt();
        let added: Vec<usize> = next
            .iter()
            .filter(|j| !support.contains(j))
            .copied()
            .collect();
        trace.record(0.5 * nres, next.len(), 1, 0.0, added, None);
        let stable = next == support && moved <= cfg.tol * norm2(&nx).max(f64::MIN_POSITIVE);
        (x, r, res, support) = (nx, nr, nres, next);
        if stable {
            trace.status = SolveStatus::Optimal;
            break;
        }
    }
    Ok(GreedyResult {
        solution: SparseSolution::from_dense(&x).finalize(),
        trace,
        degenerate: false,
    })
}
