//! Experiment engine: problem generators, recovery metrics, parameter
//! defaults, the brute-force restricted-eigenvalue diagnostic, a solver
//! registry and seeded recovery sweeps.

mod generate;
mod metrics;
mod plan;
mod registry;
mod rip;

pub use generate::{
    add_noise, derive_seed, gen_matrix, gen_nonrip, gen_signal, NoiseSpec, SignalKind, SignalSpec,
};
pub use metrics::{
    default_lambda, default_rho, epsr, evaluate_recovery, mse, relative_error, rho_from_sparsity,
    Recovery, Rounding, TrialRecord, SUCCESS_THRESHOLD,
};
pub use plan::{
    run_plan, write_report, CellSummary, Ensemble, ExperimentPlan, MatrixSpec, OutputSpec,
    SweepReport,
};
pub use registry::{run_solver, ResolvedSolver, SolverKind, SolverOutput, SolverSpec};
pub use rip::{estimate_rip, RipEstimate, DEFAULT_RIP_CAP};
