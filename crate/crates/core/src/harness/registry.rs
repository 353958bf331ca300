use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::{default_lambda, default_rho, rho_from_sparsity, Rounding};
use crate::baselines::{
    l2_fit, l2l2_fit, niht_solve, omp_solve, ompr_solve, pg_lasso_full, sp_solve, BaselineConfig,
};
use crate::batch::{bgmp_solve, bomp_solve, build_gram, BatchSignal};
use crate::config::GmpConfig;
use crate::error::{invalid, Result, SparseError};
use crate::gmp::{default_stops, gmp_solve, sgmp_solve, StopRule};
use crate::linalg::norm2;
use crate::matrix::DesignMatrix;
use crate::solution::SparseSolution;
use crate::trace::SolveTrace;

/// Every solver reachable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverKind {
    Omp,
    Bomp,
    Sp,
    Ompr,
    Ompra,
    Niht,
    PgLasso,
    L2,
    L2L2,
    Gmp,
    Sgmp,
    Bgmp,
}

impl SolverKind {
    pub const ALL: [SolverKind; 12] = [
        SolverKind::Omp,
        SolverKind::Bomp,
        SolverKind::Sp,
        SolverKind::Ompr,
        SolverKind::Ompra,
        SolverKind::Niht,
        SolverKind::PgLasso,
        SolverKind::L2,
        SolverKind::L2L2,
        SolverKind::Gmp,
        SolverKind::Sgmp,
        SolverKind::Bgmp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Omp => "omp",
            SolverKind::Bomp => "bomp",
            SolverKind::Sp => "sp",
            SolverKind::Ompr => "ompr",
            SolverKind::Ompra => "ompra",
            SolverKind::Niht => "niht",
            SolverKind::PgLasso => "pg-lasso",
            SolverKind::L2 => "l2",
            SolverKind::L2L2 => "l2l2",
            SolverKind::Gmp => "gmp",
            SolverKind::Sgmp => "sgmp",
            SolverKind::Bgmp => "bgmp",
        }
    }

    /// Produces a dense coefficient vector rather than a sparse code.
    pub fn is_dense(self) -> bool {
        matches!(self, SolverKind::L2 | SolverKind::L2L2)
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = SparseError;

    fn from_str(s: &str) -> Result<Self> {
        SolverKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SparseError::UnknownSolver(s.to_string()))
    }
}

/// A named solver plus its settings, as written in a sweep plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    /// Registry name, e.g. `"sgmp"`.
    pub name: String,
    /// Column label in reports; defaults to `name`.
    pub label: Option<String>,
    pub gmp: GmpConfig,
    pub baseline: BaselineConfig,
    /// Derive `ϱ` per problem from `n / (r ln m)` with this `r`.
    pub rho_r: Option<f64>,
    /// Derive `ϱ = k / r` from the true sparsity `k`; needs `r >= 6` and a
    /// known `k`. Takes precedence over `rho_r`.
    pub rho_k_r: Option<f64>,
    pub rho_rounding: Rounding,
    /// Derive `λ` per problem as this multiple of `‖Aᵀb‖_∞`.
    pub lambda_factor: Option<f64>,
    /// Fixed sparsity estimate; overrides `k_hat_factor`.
    pub k_hat: Option<usize>,
    /// `k̂ = ⌈factor · k⌉` when the true sparsity `k` is known.
    pub k_hat_factor: Option<f64>,
    /// Adds the stop rule `‖b − Ax‖ ≤ residual_tol · ‖b‖`.
    pub residual_tol: Option<f64>,
    /// Iteration cap for the full LASSO solver.
    pub lasso_max_iter: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            name: SolverKind::Gmp.name().to_string(),
            label: None,
            gmp: GmpConfig::default(),
            baseline: BaselineConfig::default(),
            rho_r: None,
            rho_k_r: None,
            rho_rounding: Rounding::Ceil,
            lambda_factor: None,
            k_hat: None,
            k_hat_factor: None,
            residual_tol: None,
            lasso_max_iter: 20_000,
        }
    }
}

/// Concrete settings for one problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSolver {
    pub kind: SolverKind,
    pub gmp: GmpConfig,
    pub baseline: BaselineConfig,
    pub stops: Vec<StopRule>,
    pub lasso_max_iter: usize,
}

impl SolverSpec {
    pub fn new(kind: SolverKind) -> Self {
        Self {
            name: kind.name().to_string(),
            ..Self::default()
        }
    }

    pub fn kind(&self) -> Result<SolverKind> {
        self.name.parse()
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.name)
    }

    /// Applies the per-problem rules. `k` is the true sparsity, when known.
    /// Without `k_hat` or a known `k`, OMP and BOMP run until a stop rule
    /// fires (at most `n` atoms, or `max_atoms` when smaller) and the other baselines use
    /// their own `k_hat`.
    pub fn resolve(&self, a: &DesignMatrix, b: &[f64], k: Option<usize>) -> Result<ResolvedSolver> {
        let kind = self.kind()?;
        let mut gmp = self.gmp.clone();
        if let Some(r) = self.rho_r {
            gmp.rho = default_rho(a.n(), a.m(), r, self.rho_rounding)?;
        }
        if let Some(r) = self.rho_k_r {
            let k = k.ok_or_else(|| invalid("rho_k_r needs the true sparsity k"))?;
            gmp.rho = rho_from_sparsity(k, r, self.rho_rounding)?;
        }
        if let Some(factor) = self.lambda_factor {
            if !(factor >= 0.0) {
                return Err(invalid("lambda_factor must be non-negative"));
            }
            gmp.lambda = factor / 0.005 * default_lambda(a, b)?;
        }
        gmp.validate()?;
        let mut baseline = self.baseline.clone();
        baseline.k_hat = match (self.k_hat, self.k_hat_factor, k) {
            (Some(fixed), _, _) => fixed,
            (None, Some(f), Some(k)) => (f * k as f64).ceil() as usize,
            (None, None, Some(k)) => k,
            (None, _, None) if matches!(kind, SolverKind::Omp | SolverKind::Bomp) => {
                gmp.max_atoms.map_or(a.n(), |cap| cap.min(a.n()))
            }
            (None, _, None) => baseline.k_hat,
        };
        baseline.validate()?;
        let mut stops = default_stops(&gmp);
        if let Some(tol) = self.residual_tol {
            stops.push(StopRule::ResidualNorm {
                r_2: tol * norm2(b),
            });
        }
        Ok(ResolvedSolver {
            kind,
            gmp,
            baseline,
            stops,
            lasso_max_iter: self.lasso_max_iter,
        })
    }
}

/// What any registered solver returns.
#[derive(Debug, Clone)]
pub struct SolverOutput {
    pub solution: SparseSolution,
    pub trace: Option<SolveTrace>,
    pub warning: Option<String>,
}

impl SolverOutput {
    fn sparse(solution: SparseSolution, trace: SolveTrace) -> Self {
        Self {
            solution,
            trace: Some(trace),
            warning: None,
        }
    }
}

/// Dispatches one solve by registry name.
pub fn run_solver(solver: &ResolvedSolver, a: &DesignMatrix, b: &[f64]) -> Result<SolverOutput> {
    let k_hat = solver.baseline.k_hat;
    Ok(match solver.kind {
        SolverKind::Gmp => {
            let (x, t) = gmp_solve(a, b, &solver.gmp, &solver.stops)?;
            SolverOutput::sparse(x, t)
        }
        SolverKind::Sgmp => {
            let (x, t) = sgmp_solve(a, b, &solver.gmp, &solver.stops)?;
            SolverOutput::sparse(x, t)
        }
        SolverKind::Bgmp => {
            let cache = build_gram(a)?;
            let (x, t) = bgmp_solve(&cache, &BatchSignal::new(a, b)?, &solver.gmp, &solver.stops)?;
            SolverOutput::sparse(x, t)
        }
        SolverKind::Bomp => {
            let cache = build_gram(a)?;
            let r = bomp_solve(&cache, &BatchSignal::new(a, b)?, k_hat)?;
            SolverOutput::sparse(r.solution, r.trace)
        }
        SolverKind::Omp => {
            let r = omp_solve(a, b, k_hat, &solver.stops)?;
            SolverOutput::sparse(r.solution, r.trace)
        }
        SolverKind::Sp => {
            let r = sp_solve(a, b, &solver.baseline)?;
            SolverOutput::sparse(r.solution, r.trace)
        }
        SolverKind::Ompr | SolverKind::Ompra => {
            let cfg = BaselineConfig {
                adaptive_eta: solver.kind == SolverKind::Ompra,
                ..solver.baseline.clone()
            };
            let r = ompr_solve(a, b, &cfg)?;
            SolverOutput::sparse(r.solution, r.trace)
        }
        SolverKind::Niht => {
            let r = niht_solve(a, b, &solver.baseline)?;
            SolverOutput::sparse(r.solution, r.trace)
        }
        SolverKind::PgLasso => {
            let r = pg_lasso_full(
                a,
                b,
                solver.gmp.lambda,
                solver.gmp.inner_tol,
                solver.lasso_max_iter,
            )?;
            SolverOutput {
                solution: r.solution,
                trace: None,
                warning: (!r.converged)
                    .then(|| format!("not converged after {} iterations", r.iterations)),
            }
        }
        SolverKind::L2 | SolverKind::L2L2 => {
            let fit = if solver.kind == SolverKind::L2 {
                l2_fit(a, b)?
            } else {
                l2l2_fit(a, b, solver.baseline.ridge_lambda)?
            };
            SolverOutput {
                solution: SparseSolution::from_dense(&fit.coeffs),
                trace: None,
                warning: fit.warning,
            }
        }
    })
}
