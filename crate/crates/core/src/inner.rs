//! Master-problem solvers over a working set of atoms.
//!
//! Both solvers minimize `λ‖u‖₁ + φ(u)` where `φ(u) = ½‖b − A_I u‖²` is
//! supplied through [`RestrictedProblem`], so the same iteration code runs
//! against the dense dictionary ([`DenseRestricted`]) and against a cached
//! Gram matrix ([`crate::batch::GramRestricted`]).

use std::collections::HashSet;

use crate::config::GmpConfig;
use crate::error::{check_len, invalid, Result, SparseError};
use crate::linalg::{axpy, dot, norm1, norm2_sq, norm_inf};
use crate::matrix::DesignMatrix;
use crate::solution::{Residual, SparseSolution};

/// Curvature below `DEGENERATE_CURVATURE · ‖p‖²` marks a rank-deficient
/// working set.
pub const DEGENERATE_CURVATURE: f64 = 1e-14;

/// Smooth part of a master problem restricted to a working set.
pub trait RestrictedProblem {
    fn dim(&self) -> usize;
    /// `φ(u)`, with `∇φ(u)` written into `grad`.
    fn value_grad(&self, u: &[f64], grad: &mut [f64]) -> f64;
    /// Writes `H p` (with `H = A_IᵀA_I`) into `out` and returns `pᵀHp`.
    fn hess_vec(&self, p: &[f64], out: &mut [f64]) -> f64;
    /// Largest squared column norm in the working set.
    fn max_col_norm_sq(&self) -> f64;
    /// Magnitude that bounds the rounding error of `value_grad` at `phi`.
    fn value_scale(&self, phi: f64) -> f64 {
        phi.abs()
    }
}

/// `φ(u) = ½‖b − A_I u‖²` evaluated against the dense dictionary.
pub struct DenseRestricted<'a> {
    a: &'a DesignMatrix,
    b: &'a [f64],
    idx: &'a [usize],
    b_norm: f64,
}

impl<'a> DenseRestricted<'a> {
    pub fn new(a: &'a DesignMatrix, b: &'a [f64], idx: &'a [usize]) -> Self {
        Self { a, b, idx, b_norm: norm2_sq(b).sqrt() }
    }

    pub fn residual(&self, u: &[f64]) -> Vec<f64> {
        let mut r = self.b.to_vec();
        for (&j, &c) in self.idx.iter().zip(u) {
            if c != 0.0 {
                axpy(-c, self.a.column(j), &mut r);
            }
        }
        r
    }
}

impl RestrictedProblem for DenseRestricted<'_> {
    fn dim(&self) -> usize {
        self.idx.len()
    }

    fn value_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let r = self.residual(u);
        for (g, &j) in grad.iter_mut().zip(self.idx) {
            *g = -dot(self.a.column(j), &r);
        }
        0.5 * norm2_sq(&r)
    }

    fn hess_vec(&self, p: &[f64], out: &mut [f64]) -> f64 {
        let w = self.a.combine(self.idx, p);
        for (o, &j) in out.iter_mut().zip(self.idx) {
            *o = dot(self.a.column(j), &w);
        }
        norm2_sq(&w)
    }

    fn max_col_norm_sq(&self) -> f64 {
        self.idx
            .iter()
            .map(|&j| self.a.col_norm(j).powi(2))
            .fold(0.0, f64::max)
    }

    fn value_scale(&self, phi: f64) -> f64 {
        // residual entries carry cancellation error of order ε‖b‖
        (self.b_norm * (2.0 * phi.abs()).sqrt()).max(phi.abs())
    }
}

/// Iteration limits for one master solve.
#[derive(Debug, Clone, Copy)]
pub struct InnerOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Starting step constant for PG; `None` uses the largest squared
    /// column norm of the working set.
    pub lipschitz: Option<f64>,
}

impl InnerOptions {
    pub fn from_config(cfg: &GmpConfig) -> Self {
        Self {
            max_iter: cfg.max_inner,
            tol: cfg.inner_tol,
            lipschitz: None,
        }
    }
}

/// Outcome of one master solve.
#[derive(Debug, Clone)]
pub struct InnerState {
    pub u: Vec<f64>,
    /// Final PG step constant `L` (unused by CGD, reported as 1).
    pub lipschitz: f64,
    /// Accepted iterations.
    pub iterations: usize,
    /// Objective `λ‖u‖₁ + φ(u)` at `u`.
    pub objective: f64,
    pub converged: bool,
    /// CGD met a vanishing-curvature direction.
    pub degenerate: bool,
    /// `(f(u⁰), f(u¹), L)` for the first accepted PG step.
    pub first_step: Option<(f64, f64, f64)>,
    /// `b − A_I u`, filled in by the dense entry points.
    pub residual: Option<Residual>,
}

/// `S_{L,λ}(o)_i = sign(o_i)·max{|o_i| − λ/L, 0}`.
pub fn soft_threshold(o: &[f64], lambda: f64, lipschitz: f64) -> Result<Vec<f64>> {
    check_step(lambda, lipschitz)?;
    let t = lambda / lipschitz;
    Ok(o.iter().map(|&v| shrink(v, t)).collect())
}

#[inline]
fn shrink(v: f64, t: f64) -> f64 {
    let mag = v.abs() - t;
    if mag > 0.0 {
        mag.copysign(v)
    } else {
        0.0
    }
}

fn check_step(lambda: f64, lipschitz: f64) -> Result<()> {
    if !(lipschitz > 0.0) {
        return Err(invalid(format!(
            "step constant L must be positive, got {lipschitz}"
        )));
    }
    if !(lambda >= 0.0) {
        return Err(invalid(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    Ok(())
}

/// `G(u) = L(u − S_{L,λ}(u − g/L))`; equals `g` when `λ = 0`.
pub fn generalized_gradient(u: &[f64], g: &[f64], lambda: f64, lipschitz: f64) -> Result<Vec<f64>> {
    check_step(lambda, lipschitz)?;
    check_len("gradient", u.len(), g.len())?;
    if lambda == 0.0 {
        return Ok(g.to_vec());
    }
    let t = lambda / lipschitz;
    Ok(u.iter()
        .zip(g)
        .map(|(&ui, &gi)| lipschitz * (ui - shrink(ui - gi / lipschitz, t)))
        .collect())
}

fn gen_grad_inf(u: &[f64], g: &[f64], lambda: f64, lipschitz: f64) -> f64 {
    let t = lambda / lipschitz;
    u.iter()
        .zip(g)
        .map(|(&ui, &gi)| (lipschitz * (ui - shrink(ui - gi / lipschitz, t))).abs())
        .fold(0.0, f64::max)
}

/// Proximal gradient with backtracking on `L`.
///
/// A step is accepted when
/// `φ(u⁺) ≤ φ(u) + ∇φ(u)ᵀ(u⁺ − u) + (L/2)‖u⁺ − u‖²`; otherwise `L` doubles.
/// Stops when `‖G(u)‖_∞ ≤ tol`, when the iteration cap is hit, or when
/// rounding makes a step non-improving.
pub fn pg_minimize<P: RestrictedProblem>(
    problem: &P,
    lambda: f64,
    warm: &[f64],
    opts: InnerOptions,
) -> Result<InnerState> {
    let d = problem.dim();
    check_len("warm start", d, warm.len())?;
    let mut u = warm.to_vec();
    let mut grad = vec![0.0; d];
    let mut phi = problem.value_grad(&u, &mut grad);
    let mut f = phi + lambda * norm1(&u);
    if !f.is_finite() {
        return Err(SparseError::Diverged(
            "non-finite objective at warm start".into(),
        ));
    }
    let mut lip = opts
        .lipschitz
        .unwrap_or_else(|| problem.max_col_norm_sq())
        .max(f64::MIN_POSITIVE);
    let mut cand = vec![0.0; d];
    let mut cand_grad = vec![0.0; d];
    let mut iterations = 0;
    let mut converged = false;
    let mut first_step = None;

    loop {
        if gen_grad_inf(&u, &grad, lambda, lip) <= opts.tol {
            converged = true;
            break;
        }
        if iterations == opts.max_iter {
            break;
        }
        let (cand_phi, step_sq) = loop {
            let t = lambda / lip;
            for i in 0..d {
                cand[i] = shrink(u[i] - grad[i] / lip, t);
            }
            let mut lin = 0.0;
            let mut step_sq = 0.0;
            for i in 0..d {
                let diff = cand[i] - u[i];
                lin += grad[i] * diff;
                step_sq += diff * diff;
            }
            let cand_phi = problem.value_grad(&cand, &mut cand_grad);
            if !cand_phi.is_finite() {
                return Err(SparseError::Diverged(
                    "non-finite objective in line search".into(),
                ));
            }
            let model = phi + lin + 0.5 * lip * step_sq;
            let slack = 4.0 * f64::EPSILON * (problem.value_scale(phi) + model.abs());
            if cand_phi <= model + slack {
                break (cand_phi, step_sq);
            }
            lip *= 2.0;
            if lip > 1e300 {
                return Err(SparseError::Diverged(
                    "line search step constant overflowed".into(),
                ));
            }
        };
        let cand_f = cand_phi + lambda * norm1(&cand);
        let floor = 8.0 * f64::EPSILON * problem.value_scale(phi).max(f.abs());
        if cand_f > f + floor || step_sq == 0.0 {
            // rounding floor: no representable improvement left
            converged = true;
            break;
        }
        if iterations == 0 {
            first_step = Some((f, cand_f, lip));
        }
        std::mem::swap(&mut u, &mut cand);
        std::mem::swap(&mut grad, &mut cand_grad);
        phi = cand_phi;
        f = cand_f;
        iterations += 1;
    }

    Ok(InnerState {
        u,
        lipschitz: lip,
        iterations,
        objective: f,
        converged,
        degenerate: false,
        first_step,
        residual: None,
    })
}

/// Nonlinear conjugate gradient (Polak–Ribière, exact line search) for the
/// least-squares master problem. Restarts along steepest descent every
/// `dim` iterations and whenever the direction stops descending.
pub fn cgd_minimize<P: RestrictedProblem>(
    problem: &P,
    warm: &[f64],
    opts: InnerOptions,
) -> Result<InnerState> {
    let d = problem.dim();
    check_len("warm start", d, warm.len())?;
    let mut u = warm.to_vec();
    let mut grad = vec![0.0; d];
    let mut phi = problem.value_grad(&u, &mut grad);
    if !phi.is_finite() {
        return Err(SparseError::Diverged(
            "non-finite objective at warm start".into(),
        ));
    }
    let mut dir: Vec<f64> = grad.iter().map(|g| -g).collect();
    let mut hp = vec![0.0; d];
    let mut iterations = 0;
    let mut since_restart = 0;
    let mut exact_grad = true;
    let mut converged = false;
    let mut degenerate = false;

    loop {
        if norm_inf(&grad) <= opts.tol {
            if exact_grad {
                converged = true;
                break;
            }
            // the recursive gradient drifts; confirm against a fresh one
            phi = problem.value_grad(&u, &mut grad);
            exact_grad = true;
            since_restart = 0;
            dir.iter_mut().zip(&grad).for_each(|(p, g)| *p = -g);
            continue;
        }
        if iterations == opts.max_iter {
            break;
        }
        let mut slope = dot(&grad, &dir);
        if slope >= 0.0 {
            dir.iter_mut().zip(&grad).for_each(|(p, g)| *p = -g);
            slope = -norm2_sq(&grad);
            since_restart = 0;
        }
        let curv = problem.hess_vec(&dir, &mut hp);
        if curv <= DEGENERATE_CURVATURE * norm2_sq(&dir) {
            degenerate = true;
            break;
        }
        let alpha = -slope / curv;
        axpy(alpha, &dir, &mut u);
        phi += alpha * slope + 0.5 * alpha * alpha * curv;
        let old_grad_sq = norm2_sq(&grad);
        let mut new_grad = grad.clone();
        axpy(alpha, &hp, &mut new_grad);
        iterations += 1;
        since_restart += 1;

        if since_restart >= d {
            phi = problem.value_grad(&u, &mut grad);
            exact_grad = true;
            since_restart = 0;
            dir.iter_mut().zip(&grad).for_each(|(p, g)| *p = -g);
        } else {
            let mut num = 0.0;
            for i in 0..d {
                num += new_grad[i] * (new_grad[i] - grad[i]);
            }
            let beta = (num / old_grad_sq).max(0.0);
            for i in 0..d {
                dir[i] = -new_grad[i] + beta * dir[i];
            }
            grad = new_grad;
            exact_grad = false;
        }
        if !phi.is_finite() {
            return Err(SparseError::Diverged("non-finite objective in CGD".into()));
        }
    }

    let mut scratch = vec![0.0; d];
    let objective = problem.value_grad(&u, &mut scratch);
    Ok(InnerState {
        u,
        lipschitz: 1.0,
        iterations,
        objective,
        converged,
        degenerate,
        first_step: None,
        residual: None,
    })
}

fn check_working_set(a: &DesignMatrix, b: &[f64], idx: &[usize], warm: &[f64]) -> Result<()> {
    check_len("measurement vector", a.n(), b.len())?;
    check_len("warm start", idx.len(), warm.len())?;
    if idx.is_empty() {
        return Err(invalid("working set must contain at least one atom"));
    }
    let mut seen = HashSet::with_capacity(idx.len());
    for &j in idx {
        if j >= a.m() {
            return Err(SparseError::IndexOutOfRange { index: j, m: a.m() });
        }
        if !seen.insert(j) {
            return Err(invalid(format!("duplicate atom {j} in working set")));
        }
    }
    Ok(())
}

/// ℓ1-regularized master problem over the atoms `idx` (requires `λ > 0`).
pub fn pg_solve(
    a: &DesignMatrix,
    b: &[f64],
    idx: &[usize],
    warm: &[f64],
    cfg: &GmpConfig,
) -> Result<(Vec<f64>, InnerState)> {
    check_working_set(a, b, idx, warm)?;
    if !(cfg.lambda > 0.0) {
        return Err(invalid(
            "pg_solve requires lambda > 0; use cgd_solve for lambda = 0",
        ));
    }
    let problem = DenseRestricted::new(a, b, idx);
    let mut state = pg_minimize(&problem, cfg.lambda, warm, InnerOptions::from_config(cfg))?;
    state.residual = Some(Residual::new(problem.residual(&state.u)));
    Ok((state.u.clone(), state))
}

/// Least-squares master problem over the atoms `idx` (requires `λ = 0`).
pub fn cgd_solve(
    a: &DesignMatrix,
    b: &[f64],
    idx: &[usize],
    warm: &[f64],
    cfg: &GmpConfig,
) -> Result<(Vec<f64>, InnerState)> {
    check_working_set(a, b, idx, warm)?;
    if cfg.lambda != 0.0 {
        return Err(invalid("cgd_solve requires lambda = 0"));
    }
    let problem = DenseRestricted::new(a, b, idx);
    let mut state = cgd_minimize(&problem, warm, InnerOptions::from_config(cfg))?;
    state.residual = Some(Residual::new(problem.residual(&state.u)));
    Ok((state.u.clone(), state))
}

/// Gradient tolerance used when refitting a support by least squares.
pub const DEBIAS_TOL: f64 = 1e-10;

/// Least-squares refit on the support of `x`, warm-started from its values.
/// The returned state carries the CGD degenerate flag.
pub fn debias(
    a: &DesignMatrix,
    b: &[f64],
    x: &SparseSolution,
) -> Result<(SparseSolution, InnerState)> {
    if x.is_empty() {
        return Err(invalid("debias needs a non-empty support"));
    }
    check_len("solution ambient dimension", a.m(), x.m())?;
    let cfg = GmpConfig {
        lambda: 0.0,
        inner_tol: DEBIAS_TOL,
        max_inner: 20 * x.nnz() + 100,
        ..GmpConfig::default()
    };
    let (u, state) = cgd_solve(a, b, x.support(), x.values(), &cfg)?;
    Ok((x.with_values(u)?, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(lambda: f64) -> GmpConfig {
        GmpConfig {
            lambda,
            ..GmpConfig::default()
        }
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(
            soft_threshold(&[0.0, 0.0], 3.0, 2.0).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            soft_threshold(&[3.0, -1.0], 2.0, 1.0).unwrap(),
            vec![1.0, 0.0]
        );
        assert_eq!(soft_threshold(&[0.5], 1.0, 4.0).unwrap(), vec![0.25]);
        assert!(soft_threshold(&[1.0], 1.0, 0.0).is_err());
        assert!(soft_threshold(&[1.0], 1.0, -2.0).is_err());
    }

    #[test]
    fn generalized_gradient_examples() {
        let g = [0.3, -7.0, 2.5];
        assert_eq!(
            generalized_gradient(&[1.0, 2.0, -4.0], &g, 0.0, 3.0).unwrap(),
            g.to_vec()
        );
        let zero = generalized_gradient(&[0.0, 0.0], &[0.4, -0.5], 0.5, 2.0).unwrap();
        assert_eq!(zero, vec![0.0, 0.0]);
        assert!(generalized_gradient(&[0.0], &[1.0], 0.1, 0.0).is_err());
    }

    #[test]
    fn pg_scalar_soft_threshold() {
        let a = DesignMatrix::identity(4);
        let b = [0.0, 0.0, 1.0, 0.0];
        let (u, state) = pg_solve(&a, &b, &[2], &[0.0], &cfg(0.1)).unwrap();
        assert!((u[0] - 0.9).abs() < 1e-12);
        assert!(state.converged);
    }

    #[test]
    fn pg_fixed_point_when_warm_is_optimal() {
        let a = DesignMatrix::identity(4);
        let b = [0.0, 0.0, 1.0, 0.0];
        let (u, state) = pg_solve(&a, &b, &[2], &[0.9], &cfg(0.1)).unwrap();
        assert_eq!(u, vec![0.9]);
        assert!(state.iterations <= 1);
    }

    #[test]
    fn pg_rejects_empty_and_zero_lambda() {
        let a = DesignMatrix::identity(3);
        assert!(pg_solve(&a, &[1.0, 0.0, 0.0], &[], &[], &cfg(0.1)).is_err());
        assert!(pg_solve(&a, &[1.0, 0.0, 0.0], &[0], &[0.0], &cfg(0.0)).is_err());
        assert!(pg_solve(&a, &[1.0, 0.0, 0.0], &[0, 0], &[0.0, 0.0], &cfg(0.1)).is_err());
    }

    #[test]
    fn cgd_orthonormal_columns() {
        let a = DesignMatrix::identity(4);
        let b = [1.0, 0.0, 3.0, 0.0];
        let (u, state) = cgd_solve(&a, &b, &[0, 2], &[0.0, 0.0], &cfg(0.0)).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-12 && (u[1] - 3.0).abs() < 1e-12);
        assert!(state.iterations <= 2);
        assert!(state.converged);
    }

    #[test]
    fn cgd_warm_exact_solution_takes_no_steps() {
        let a = DesignMatrix::identity(4);
        let b = [1.0, 0.0, 3.0, 0.0];
        let (_, state) = cgd_solve(&a, &b, &[0, 2], &[1.0, 3.0], &cfg(0.0)).unwrap();
        assert_eq!(state.iterations, 0);
    }

    #[test]
    fn cgd_flags_duplicate_columns() {
        // two identical columns; the direction (1, -1) has zero curvature
        let a = DesignMatrix::from_col_major(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let problem = DenseRestricted::new(&a, &[0.0, 0.0], &[0, 1]);
        let opts = InnerOptions {
            max_iter: 10,
            tol: 1e-12,
            lipschitz: None,
        };
        let mut hp = vec![0.0; 2];
        assert!(problem.hess_vec(&[1.0, -1.0], &mut hp) <= DEGENERATE_CURVATURE * 2.0);
        // fit b = (2, 0) from (1, -1): gradient lies in the range, so CGD still converges
        let st = cgd_minimize(
            &DenseRestricted::new(&a, &[2.0, 0.0], &[0, 1]),
            &[1.0, -1.0],
            opts,
        )
        .unwrap();
        assert!((st.u[0] + st.u[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn debias_single_atom_is_projection() {
        let a = DesignMatrix::from_col_major(3, 2, vec![1.0, 2.0, 2.0, 0.0, 1.0, 0.0]).unwrap();
        let b = [1.0, 1.0, 1.0];
        let x = SparseSolution::new(2, vec![0], vec![0.1]).unwrap();
        let (y, _) = debias(&a, &b, &x).unwrap();
        assert!((y.values()[0] - 5.0 / 9.0).abs() < 1e-10);
        assert!(debias(&a, &b, &SparseSolution::zeros(2)).is_err());
    }

    proptest! {
        #[test]
        fn shrinkage_is_non_expansive(
            pair in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..12),
            lambda in 0.0f64..3.0,
            lip in 0.1f64..10.0,
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pair.into_iter().unzip();
            let sx = soft_threshold(&x, lambda, lip).unwrap();
            let sy = soft_threshold(&y, lambda, lip).unwrap();
            let d_out: f64 = sx.iter().zip(&sy).map(|(a, b)| (a - b).powi(2)).sum();
            let d_in: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
            prop_assert!(d_out <= d_in + 1e-12);
            for (o, s) in x.iter().zip(&sx) {
                prop_assert!(s.abs() <= o.abs());
                prop_assert!(*s == 0.0 || s.signum() == o.signum());
            }
        }
    }
}
