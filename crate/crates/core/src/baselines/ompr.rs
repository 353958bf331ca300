use std::collections::HashSet;

use super::{check_k_hat, refit, top_k, BaselineConfig, GreedyResult};
use crate::error::Result;
use crate::linalg::norm2_sq;
use crate::matrix::DesignMatrix;
use crate::par::Execution;
use crate::solution::SparseSolution;
use crate::trace::{SolveStatus, SolveTrace};

/// OMP with replacement.
///
/// Works in column-normalized coordinates: with `D = diag(‖a_i‖)` it
/// iterates `z = D x + η D⁻¹ Aᵀ(b − Ax)`, keeps the `k̂` largest `|z_i|` and
/// refits by least squares, until the support stops changing. With
/// A support seen before ends the run as a cycle. With
/// `cfg.adaptive_eta` (OMPRA) the step is the exact line-search minimizer
/// along the correlation direction restricted to the current support merged
/// with the `k̂` strongest outside correlations: `η = ‖d‖² / ‖A D⁻¹ d‖²`.
pub fn ompr_solve(a: &DesignMatrix, b: &[f64], cfg: &BaselineConfig) -> Result<GreedyResult> {
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
    let mut support: Vec<usize> = Vec::new();
    let mut r = b.to_vec();
    let mut g = vec![0.0; m];
    let norms = a.col_norms();
    let mut degenerate = false;
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    trace.status = SolveStatus::MaxOuter;

    for _ in 0..cfg.max_iter {
        a.correlate_into(&r, &mut g, Execution::Parallel);
        for (gi, &c) in g.iter_mut().zip(norms) {
            *gi = if c > 0.0 { *gi / c } else { 0.0 };
        }
        let eta = if cfg.adaptive_eta {
            line_search_step(a, &g, &support, k_hat).unwrap_or(cfg.eta)
        } else {
            cfg.eta
        };
        let z: Vec<f64> = x.iter().zip(&g).zip(norms).map(|((xi, gi), c)| c * xi + eta * gi).collect();
        let mut next = top_k(&z, k_hat);
        next.sort_unstable();
        let (coeffs, nr, deg) = refit(a, b, &next);
        degenerate |= deg;
        x.iter_mut().for_each(|v| *v = 0.0);
        for (&j, &c) in next.iter().zip(&coeffs) {
            x[j] = c;
        }
        let added: Vec<usize> = next
            .iter()
            .filter(|j| !support.contains(j))
            .copied()
            .collect();
        trace.record(0.5 * norm2_sq(&nr), next.len(), 1, 0.0, added, None);
        r = nr;
        let unchanged = next == support;
        support = next;
        if unchanged {
            trace.status = SolveStatus::Optimal;
            break;
        }
        if !seen.insert(support.clone()) {
            break;
        }
    }
    trace.degenerate = degenerate;
    Ok(GreedyResult {
        solution: SparseSolution::from_dense(&x).finalize(),
        trace,
        degenerate,
    })
}

fn line_search_step(a: &DesignMatrix, g: &[f64], support: &[usize], k_hat: usize) -> Option<f64> {
    let mut outside = g.to_vec();
    for &j in support {
        outside[j] = 0.0;
    }
    let mut merged: Vec<usize> = support.to_vec();
    merged.extend(top_k(&outside, k_hat));
    let d: Vec<f64> = merged.iter().map(|&j| g[j]).collect();
    let scaled: Vec<f64> = merged.iter().zip(&d).map(|(&j, v)| v / a.col_norm(j)).collect();
    let num = norm2_sq(&d);
    let den = norm2_sq(&a.combine(&merged, &scaled));
    (num > 0.0 && den > 0.0).then(|| num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_recovers_for_any_step_in_range() {
        let a = DesignMatrix::identity(6);
        let b = [0.0, 1.0, 0.0, -2.0, 0.0, 0.5];
        for eta in [0.1, 0.7, 1.0, 1.9] {
            for adaptive_eta in [false, true] {
                let cfg = BaselineConfig {
                    k_hat: 3,
                    eta,
                    adaptive_eta,
                    ..Default::default()
                };
                let r = ompr_solve(&a, &b, &cfg).unwrap();
                assert_eq!(r.solution.support(), &[1, 3, 5]);
                for (v, e) in r.solution.values().iter().zip([1.0, -2.0, 0.5]) {
                    assert!((v - e).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn full_k_hat_is_least_squares_on_all_atoms() {
        let a = DesignMatrix::from_col_major(3, 2, vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        let b = [1.0, 2.0, 3.0];
        let r = ompr_solve(
            &a,
            &b,
            &BaselineConfig {
                k_hat: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let (ls, _) = crate::linalg::lstsq_svd(a.as_dmatrix(), &b);
        for (v, w) in r.solution.to_dense().iter().zip(&ls) {
            assert!((v - w).abs() < 1e-10);
        }
    }
}
