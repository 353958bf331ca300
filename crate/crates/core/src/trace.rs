use std::io::Write;

use serde::Serialize;

use crate::error::Result;

/// Which stop rule ended a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    RelativeDelta,
    GradInf,
    ResidualNorm,
}

/// Why a solve returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// A user stop rule fired.
    Stopped(StopKind),
    /// No atom violates the dual constraint and the last master solve
    /// converged: the optimality certificate holds.
    Optimal,
    /// The support reached its cap.
    Capped,
    /// The outer iteration cap was hit.
    MaxOuter,
    /// `b = 0`; the empty solution is optimal.
    #[default]
    ZeroSignal,
}

/// Instrumentation of the first accepted proximal step after a selection:
/// objective before, objective after, the step constant used, and the
/// predicted lower bound `Σ_{i∈J}(|g_i| − λ)² / 2L` on the improvement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FirstStepBound {
    pub f_before: f64,
    pub f_after: f64,
    pub lipschitz: f64,
    pub predicted_gain: f64,
}

impl FirstStepBound {
    /// Actual improvement minus the predicted lower bound.
    pub fn slack(&self) -> f64 {
        (self.f_before - self.f_after) - self.predicted_gain
    }
}

/// Per-outer-iteration history of a GMP-family solve.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SolveTrace {
    /// `f(x⁰) = ½‖b‖²`.
    pub theta0: f64,
    pub objective_per_outer: Vec<f64>,
    /// `δᵗ = f(xᵗ⁻¹) − f(xᵗ)`, with `f(x⁰) = θ⁰`.
    pub delta_per_outer: Vec<f64>,
    pub support_sizes: Vec<usize>,
    pub inner_iterations: Vec<usize>,
    pub wall_ms: Vec<f64>,
    /// Atoms added in each round, in selection order.
    pub selections: Vec<Vec<usize>>,
    pub first_steps: Vec<Option<FirstStepBound>>,
    pub status: SolveStatus,
    /// Some master solve hit a rank-deficient direction.
    pub degenerate: bool,
    /// Floating-point operations spent computing correlations `Aᵀa`.
    pub correlation_flops: u64,
}

impl SolveTrace {
    pub fn new(theta0: f64) -> Self {
        Self {
            theta0,
            ..Default::default()
        }
    }

    pub fn outer_iterations(&self) -> usize {
        self.objective_per_outer.len()
    }

    /// Objective after the latest outer step (θ⁰ before the first).
    pub fn last_objective(&self) -> f64 {
        self.objective_per_outer
            .last()
            .copied()
            .unwrap_or(self.theta0)
    }

    pub(crate) fn record(
        &mut self,
        objective: f64,
        support_size: usize,
        inner: usize,
        wall_ms: f64,
        selection: Vec<usize>,
        first_step: Option<FirstStepBound>,
    ) {
        let prev = self.last_objective();
        self.delta_per_outer.push(prev - objective);
        self.objective_per_outer.push(objective);
        self.support_sizes.push(support_size);
        self.inner_iterations.push(inner);
        self.wall_ms.push(wall_ms);
        self.selections.push(selection);
        self.first_steps.push(first_step);
    }

    /// Flattened atom selection order.
    pub fn selection_order(&self) -> Vec<usize> {
        self.selections.iter().flatten().copied().collect()
    }

    /// Writes `outer_iter,objective,delta,support_size,inner_iters,wall_ms`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "outer_iter",
            "objective",
            "delta",
            "support_size",
            "inner_iters",
            "wall_ms",
        ])?;
        for t in 0..self.outer_iterations() {
            out.write_record(&[
                (t + 1).to_string(),
                format!("{:e}", self.objective_per_outer[t]),
                format!("{:e}", self.delta_per_outer[t]),
                self.support_sizes[t].to_string(),
                self.inner_iterations[t].to_string(),
                format!("{:.4}", self.wall_ms[t]),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}
