//! The outer matching-pursuit loop: worst-case atom selection, master
//! problem dispatch and stopping rules.
//!
//! [`gmp_solve`] and [`sgmp_solve`] run against the dense dictionary;
//! [`crate::batch::bgmp_solve`] runs the very same loop against a Gram cache.
//! The loop is written once over [`CorrelationSource`].

use std::time::Instant;

use crate::config::GmpConfig;
use crate::error::{check_len, invalid, Result};
use crate::inner::{
    cgd_minimize, pg_minimize, DenseRestricted, InnerOptions, InnerState, RestrictedProblem,
};
use crate::linalg::{norm1, norm2_sq, norm_inf};
use crate::matrix::DesignMatrix;
use crate::par::Execution;
use crate::solution::{Residual, SparseSolution};
use crate::trace::{FirstStepBound, SolveStatus, SolveTrace, StopKind};

/// The selected atoms `I_t` and the disjoint rounds `J_1, …, J_t` that built it.
#[derive(Debug, Clone)]
pub struct ActiveSet {
    all_indices: Vec<usize>,
    rounds: Vec<Vec<usize>>,
    mask: Vec<bool>,
}

impl ActiveSet {
    pub fn new(m: usize) -> Self {
        Self {
            all_indices: Vec::new(),
            rounds: Vec::new(),
            mask: vec![false; m],
        }
    }

    pub fn all_indices(&self) -> &[usize] {
        &self.all_indices
    }

    pub fn rounds(&self) -> &[Vec<usize>] {
        &self.rounds
    }

    pub fn len(&self) -> usize {
        self.all_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.all_indices.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.mask.get(j).copied().unwrap_or(false)
    }

    /// Exclusion mask over all atoms.
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Appends a round of new atoms; fails if any atom is already active,
    /// out of range, or repeated inside the round.
    pub fn push_round(&mut self, round: Vec<usize>) -> Result<()> {
        for (pos, &j) in round.iter().enumerate() {
            if j >= self.mask.len() {
                return Err(invalid(format!("atom {j} out of range")));
            }
            if self.mask[j] || round[..pos].contains(&j) {
                return Err(invalid(format!("atom {j} selected twice")));
            }
        }
        for &j in &round {
            self.mask[j] = true;
        }
        self.all_indices.extend_from_slice(&round);
        self.rounds.push(round);
        Ok(())
    }
}

/// A stopping condition checked after every outer iteration. Several rules
/// combine with OR semantics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// `2δᵗ/‖b‖² ≤ ε`, i.e. `δᵗ/θ⁰ ≤ ε`.
    RelativeDelta { epsilon: f64 },
    /// `‖Aᵀa‖_∞ ≤ r_∞`.
    GradInf { r_inf: f64 },
    /// `‖a‖ ≤ r₂`.
    ResidualNorm { r_2: f64 },
}

impl StopRule {
    pub fn kind(&self) -> StopKind {
        match self {
            StopRule::RelativeDelta { .. } => StopKind::RelativeDelta,
            StopRule::GradInf { .. } => StopKind::GradInf,
            StopRule::ResidualNorm { .. } => StopKind::ResidualNorm,
        }
    }

    fn threshold(&self) -> f64 {
        match *self {
            StopRule::RelativeDelta { epsilon } => epsilon,
            StopRule::GradInf { r_inf } => r_inf,
            StopRule::ResidualNorm { r_2 } => r_2,
        }
    }

    fn validate(&self) -> Result<()> {
        let t = self.threshold();
        if !(t > 0.0) || !t.is_finite() {
            return Err(invalid(format!(
                "stop rule {:?} needs a positive threshold",
                self.kind()
            )));
        }
        Ok(())
    }
}

/// The rule used when nothing else is requested.
pub fn default_stops(cfg: &GmpConfig) -> Vec<StopRule> {
    vec![StopRule::RelativeDelta {
        epsilon: cfg.epsilon,
    }]
}

/// Evaluates `rules` against the latest trace entry, the residual and the
/// correlation vector `g = Aᵀa`. Returns the first rule that fires.
pub fn check_stop(
    trace: &SolveTrace,
    residual: &Residual,
    g: &[f64],
    rules: &[StopRule],
) -> Option<StopKind> {
    check_stop_values(trace, residual.norm(), norm_inf(g), rules)
}

pub(crate) fn check_stop_values(
    trace: &SolveTrace,
    residual_norm: f64,
    g_inf: f64,
    rules: &[StopRule],
) -> Option<StopKind> {
    rules.iter().find_map(|rule| {
        let fired = match *rule {
            StopRule::RelativeDelta { epsilon } => trace
                .delta_per_outer
                .last()
                .is_some_and(|&d| trace.theta0 == 0.0 || d / trace.theta0 <= epsilon),
            StopRule::GradInf { r_inf } => g_inf <= r_inf,
            StopRule::ResidualNorm { r_2 } => residual_norm <= r_2,
        };
        fired.then(|| rule.kind())
    })
}

/// Picks up to `rho` atoms outside `excluded` with the largest `|g_i|`,
/// keeping only those with `|g_i| > λ`. Ties go to the lower index. An empty
/// result means no atom violates the dual constraint.
pub fn worst_case_select(g: &[f64], excluded: &[usize], rho: usize, lambda: f64) -> Vec<usize> {
    let mut mask = vec![false; g.len()];
    for &j in excluded {
        if j < mask.len() {
            mask[j] = true;
        }
    }
    select_top(g, &mask, rho, lambda)
}

pub(crate) fn select_top(g: &[f64], excluded: &[bool], rho: usize, lambda: f64) -> Vec<usize> {
    if rho == 0 {
        return Vec::new();
    }
    let mut cands: Vec<usize> = (0..g.len())
        .filter(|&j| !excluded[j] && g[j].abs() > lambda)
        .collect();
    let order = |a: &usize, b: &usize| g[*b].abs().total_cmp(&g[*a].abs()).then(a.cmp(b));
    if cands.len() > rho {
        cands.select_nth_unstable_by(rho - 1, order);
        cands.truncate(rho);
    }
    cands.sort_unstable_by(order);
    cands
}

/// What the outer loop needs from the data: correlations `Aᵀ(b − A_I x_I)`
/// and the restricted least-squares model over a working set.
pub trait CorrelationSource {
    type Problem<'p>: RestrictedProblem
    where
        Self: 'p;

    fn n_atoms(&self) -> usize;
    fn n_measurements(&self) -> usize;
    /// `½‖b‖²`.
    fn theta0(&self) -> f64;
    /// Writes `Aᵀ(b − A_I x)` into `out`; returns the flop count.
    fn correlate(&self, idx: &[usize], x: &[f64], out: &mut [f64]) -> u64;
    fn restricted<'p>(&'p self, idx: &'p [usize]) -> Self::Problem<'p>;
}

/// Dense dictionary plus measurement vector.
pub struct DenseSource<'a> {
    a: &'a DesignMatrix,
    b: &'a [f64],
    theta0: f64,
    exec: Execution,
}

impl<'a> DenseSource<'a> {
    pub fn new(a: &'a DesignMatrix, b: &'a [f64]) -> Result<Self> {
        check_len("measurement vector", a.n(), b.len())?;
        Ok(Self {
            a,
            b,
            theta0: 0.5 * norm2_sq(b),
            exec: Execution::Parallel,
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }
}

impl CorrelationSource for DenseSource<'_> {
    type Problem<'p>
        = DenseRestricted<'p>
    where
        Self: 'p;

    fn n_atoms(&self) -> usize {
        self.a.m()
    }

    fn n_measurements(&self) -> usize {
        self.a.n()
    }

    fn theta0(&self) -> f64 {
        self.theta0
    }

    fn correlate(&self, idx: &[usize], x: &[f64], out: &mut [f64]) -> u64 {
        let r = DenseRestricted::new(self.a, self.b, idx).residual(x);
        self.a.correlate_into(&r, out, self.exec);
        let (n, m) = (self.a.n() as u64, self.a.m() as u64);
        2 * n * m + 2 * n * idx.len() as u64
    }

    fn restricted<'p>(&'p self, idx: &'p [usize]) -> DenseRestricted<'p> {
        DenseRestricted::new(self.a, self.b, idx)
    }
}

fn master_solve<S: CorrelationSource>(
    src: &S,
    idx: &[usize],
    warm: &[f64],
    lambda: f64,
    opts: InnerOptions,
) -> Result<InnerState> {
    let problem = src.restricted(idx);
    if lambda > 0.0 {
        pg_minimize(&problem, lambda, warm, opts)
    } else {
        cgd_minimize(&problem, warm, opts)
    }
}

/// Subspace exploratory selection against any correlation source.
pub(crate) fn explore_select<S: CorrelationSource>(
    src: &S,
    active: &ActiveSet,
    x: &[f64],
    g: &[f64],
    cfg: &GmpConfig,
    rho: usize,
    lipschitz: Option<f64>,
) -> Result<Vec<usize>> {
    let cands = select_top(g, active.mask(), cfg.omega.max(1) * rho, cfg.lambda);
    if cfg.omega <= 1 || cands.len() <= rho {
        let mut cands = cands;
        cands.truncate(rho);
        return Ok(cands);
    }
    let mut idx = active.all_indices().to_vec();
    idx.extend_from_slice(&cands);
    let mut warm = x.to_vec();
    warm.resize(idx.len(), 0.0);
    let opts = InnerOptions {
        max_iter: (cfg.max_inner / 2).max(1),
        tol: cfg.inner_tol,
        lipschitz,
    };
    let state = master_solve(src, &idx, &warm, cfg.lambda, opts)?;
    let coeffs = &state.u[active.len()..];
    let mut ranked: Vec<usize> = (0..cands.len()).filter(|&c| coeffs[c] != 0.0).collect();
    // stable: equal coefficients keep the |g| order
    ranked.sort_by(|&p, &q| coeffs[q].abs().total_cmp(&coeffs[p].abs()));
    let mut picked: Vec<usize> = ranked.into_iter().take(rho).map(|c| cands[c]).collect();
    if picked.is_empty() {
        picked = cands[..rho].to_vec();
    }
    Ok(picked)
}

/// Subspace exploratory matching over the dense dictionary: take the `ωϱ`
/// largest `|g_j|`, solve the master problem over `I_t` plus those
/// candidates (at most `max_inner / 2` iterations, warm from `x_warm` with
/// zero candidate coefficients) and keep the `ϱ` candidates with the
/// largest `|u_i|`.
pub fn sgmp_select(
    a: &DesignMatrix,
    b: &[f64],
    state: &ActiveSet,
    g: &[f64],
    cfg: &GmpConfig,
    x_warm: &[f64],
) -> Result<Vec<usize>> {
    cfg.validate()?;
    check_len("correlation vector", a.m(), g.len())?;
    check_len("warm start", state.len(), x_warm.len())?;
    let src = DenseSource::new(a, b)?;
    explore_select(&src, state, x_warm, g, cfg, cfg.rho, None)
}

/// Runs the GMP outer loop. `explore` switches on subspace exploratory
/// selection when `cfg.omega > 1`.
pub fn run_outer<S: CorrelationSource>(
    src: &S,
    cfg: &GmpConfig,
    stops: &[StopRule],
    explore: bool,
) -> Result<(SparseSolution, SolveTrace)> {
    cfg.validate()?;
    for rule in stops {
        rule.validate()?;
    }
    let m = src.n_atoms();
    let lambda = cfg.lambda;
    let mut trace = SolveTrace::new(src.theta0());
    if src.theta0() == 0.0 {
        trace.status = SolveStatus::ZeroSignal;
        return Ok((SparseSolution::zeros(m), trace));
    }
    let cap = cfg.atom_cap(src.n_measurements()).min(m);
    let mut active = ActiveSet::new(m);
    let mut x: Vec<f64> = Vec::new();
    let mut g = vec![0.0; m];
    trace.correlation_flops += src.correlate(&[], &[], &mut g);
    let mut lipschitz: Option<f64> = None;
    let mut last_converged = true;
    trace.status = SolveStatus::MaxOuter;

    for _ in 0..cfg.max_outer {
        let started = Instant::now();
        let room = cap - active.len();
        let rho = cfg.rho.min(room);
        let picked = if rho == 0 {
            Vec::new()
        } else if explore && cfg.omega > 1 {
            explore_select(src, &active, &x, &g, cfg, rho, lipschitz)?
        } else {
            select_top(&g, active.mask(), rho, lambda)
        };
        if picked.is_empty() && last_converged {
            trace.status = if room == 0 {
                SolveStatus::Capped
            } else {
                SolveStatus::Optimal
            };
            break;
        }
        let predicted: f64 = picked.iter().map(|&i| (g[i].abs() - lambda).powi(2)).sum();
        active.push_round(picked.clone())?;
        x.resize(active.len(), 0.0);

        let opts = InnerOptions {
            max_iter: cfg.max_inner,
            tol: cfg.inner_tol,
            lipschitz: lipschitz.map(|l| l / 2.0),
        };
        let state = master_solve(src, active.all_indices(), &x, lambda, opts)?;
        if lambda > 0.0 {
            lipschitz = Some(state.lipschitz);
        }
        last_converged = state.converged;
        trace.degenerate |= state.degenerate;
        x = state.u;
        let objective = state.objective;
        let first_step = match state.first_step {
            Some((f_before, f_after, lip)) if !picked.is_empty() => Some(FirstStepBound {
                f_before,
                f_after,
                lipschitz: lip,
                predicted_gain: predicted / (2.0 * lip),
            }),
            _ => None,
        };

        trace.correlation_flops += src.correlate(active.all_indices(), &x, &mut g);
        trace.record(
            objective,
            active.len(),
            state.iterations,
            started.elapsed().as_secs_f64() * 1e3,
            picked,
            first_step,
        );
        let phi = objective - lambda * norm1(&x);
        let residual_norm = (2.0 * phi).max(0.0).sqrt();
        if let Some(kind) = check_stop_values(&trace, residual_norm, norm_inf(&g), stops) {
            trace.status = SolveStatus::Stopped(kind);
            break;
        }
    }

    let solution = SparseSolution::new(m, active.all_indices().to_vec(), x)?.finalize();
    Ok((solution, trace))
}

/// Plain GMP (`ω` is ignored).
pub fn gmp_solve(
    a: &DesignMatrix,
    b: &[f64],
    cfg: &GmpConfig,
    stops: &[StopRule],
) -> Result<(SparseSolution, SolveTrace)> {
    let src = DenseSource::new(a, b)?;
    run_outer(&src, cfg, stops, false)
}

/// GMP with subspace exploratory selection when `cfg.omega > 1`.
pub fn sgmp_solve(
    a: &DesignMatrix,
    b: &[f64],
    cfg: &GmpConfig,
    stops: &[StopRule],
) -> Result<(SparseSolution, SolveTrace)> {
    let src = DenseSource::new(a, b)?;
    run_outer(&src, cfg, stops, true)
}

/// Optimality residuals of a LASSO solution.
#[derive(Debug, Clone, Copy)]
pub struct KktReport {
    /// `‖Aᵀξ‖_∞` with `ξ = b − Ax`.
    pub grad_inf: f64,
    /// `max_{j∈supp} |a_jᵀξ − λ·sign(x_j)|`.
    pub support_deviation: f64,
}

impl KktReport {
    /// `‖Aᵀξ‖_∞ ≤ λ(1 + rel)` and support deviation `≤ rel·λ`.
    pub fn holds(&self, lambda: f64, rel: f64) -> bool {
        self.grad_inf <= lambda * (1.0 + rel) && self.support_deviation <= rel * lambda
    }
}

pub fn kkt_report(
    a: &DesignMatrix,
    b: &[f64],
    x: &SparseSolution,
    lambda: f64,
) -> Result<KktReport> {
    let r = crate::matrix::residual(a, b, x)?;
    let g = crate::matrix::correlate(a, &r)?;
    let support_deviation = x
        .support()
        .iter()
        .zip(x.values())
        .map(|(&j, &v)| (g[j] - lambda * v.signum()).abs())
        .fold(0.0, f64::max);
    Ok(KktReport {
        grad_inf: norm_inf(&g),
        support_deviation,
    })
}
