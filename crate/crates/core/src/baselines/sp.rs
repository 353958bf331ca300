use std::collections::BTreeSet;

use super::{check_k_hat, refit, top_k, BaselineConfig, GreedyResult};
use crate::error::Result;
use crate::linalg::norm2_sq;
use crate::matrix::DesignMatrix;
use crate::par::Execution;
use crate::solution::SparseSolution;
use crate::trace::{SolveStatus, SolveTrace};

/// Subspace pursuit with sparsity estimate `cfg.k_hat`.
///
/// Each iteration merges the current support with the `k̂` atoms most
/// correlated with the residual, refits on the merged set, keeps the `k̂`
/// largest coefficients and refits again. The residual is not monotone off
/// RIP, so the best-residual iterate is returned.
pub fn sp_solve(a: &DesignMatrix, b: &[f64], cfg: &BaselineConfig) -> Result<GreedyResult> {
    cfg.validate()?;
    let k_hat = cfg.k_hat;
    check_k_hat(a, b, k_hat, a.n().min(a.m()))?;
    let m = a.m();
    let mut trace = SolveTrace::new(0.5 * norm2_sq(b));
    if trace.theta0 == 0.0 {
        trace.status = SolveStatus::ZeroSignal;
        return Ok(GreedyResult::empty(m, trace));
    }
    let mut g = vec![0.0; m];
    a.correlate_into(b, &mut g, Execution::Parallel);
    let mut support = top_k(&g, k_hat);
    support.sort_unstable();
    let (mut x, mut r, mut degenerate) = refit(a, b, &support);
    let mut res = norm2_sq(&r);
    trace.record(0.5 * res, support.len(), 1, 0.0, support.clone(), None);
    let mut best = (res, support.clone(), x.clone());
    trace.status = SolveStatus::MaxOuter;

    for _ in 0..cfg.max_iter {
        a.correlate_into(&r, &mut g, Execution::Parallel);
        for &j in &support {
            g[j] = 0.0;
        }
        let merged: BTreeSet<usize> = support.iter().copied().chain(top_k(&g, k_hat)).collect();
        let merged: Vec<usize> = merged.into_iter().collect();
        let (u, _, deg) = refit(a, b, &merged);
        degenerate |= deg;
        let mut next: Vec<usize> = top_k(&u, k_hat).into_iter().map(|p| merged[p]).collect();
        next.sort_unstable();
        let (nx, nr, deg) = refit(a, b, &next);
        degenerate |= deg;
        let nres = norm2_sq(&nr);
        let added: Vec<usize> = next
            .iter()
            .filter(|j| !support.contains(j))
            .copied()
            .collect();
        trace.record(0.5 * nres, next.len(), 1, 0.0, added, None);
        if nres < best.0 {
            best = (nres, next.clone(), nx.clone());
        }
        if nres >= res || next == support {
            trace.status = SolveStatus::Optimal;
            break;
        }
        (support, x, r, res) = (next, nx, nr, nres);
    }
    let _ = x;
    trace.degenerate = degenerate;
    let (_, support, values) = best;
    Ok(GreedyResult {
        solution: SparseSolution::new(m, support, values)?.finalize(),
        trace,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_exact_in_one_pass() {
        let a = DesignMatrix::identity(6);
        let b = [0.0, 2.0, 0.0, 0.0, -1.5, 0.0];
        let r = sp_solve(&a, &b, &BaselineConfig::with_k_hat(2)).unwrap();
        assert_eq!(r.solution.support(), &[1, 4]);
        for (v, e) in r.solution.values().iter().zip([2.0, -1.5]) {
            assert!((v - e).abs() < 1e-14);
        }
        assert!(r.trace.outer_iterations() <= 2);
    }

    #[test]
    fn rejects_k_hat_above_n() {
        let a = DesignMatrix::identity(3);
        assert!(sp_solve(&a, &[1.0, 0.0, 0.0], &BaselineConfig::with_k_hat(4)).is_err());
    }
}
