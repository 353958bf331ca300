use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::generate::{
    add_noise, derive_seed, gen_matrix, gen_signal, NoiseSpec, SignalKind, SignalSpec,
};
use super::metrics::{epsr, evaluate_recovery, mse, TrialRecord};
use super::registry::{run_solver, SolverSpec};
use crate::error::{invalid, Result};
use crate::io::load_design;
use crate::linalg::norm2;
use crate::matrix::{matvec, DesignMatrix};
use crate::par::{map_indexed, Execution};
use crate::solution::SparseSolution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ensemble {
    #[default]
    Gaussian,
    /// Loaded from `MatrixSpec::path` (SPMX or CSV).
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    pub n: usize,
    pub m: usize,
    #[serde(default)]
    pub ensemble: Ensemble,
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Draw a new Gaussian matrix for every trial.
    #[serde(default = "yes")]
    pub fresh_per_trial: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("sweep-out"),
        }
    }
}

/// A recovery sweep over sparsity levels, trials and solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    #[serde(default)]
    pub seed: u64,
    /// Trials per (solver, k) cell.
    pub trials: usize,
    pub k_values: Vec<usize>,
    pub matrix: MatrixSpec,
    #[serde(default = "gaussian_signal")]
    pub signal: SignalKind,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub solvers: Vec<SolverSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

fn gaussian_signal() -> SignalKind {
    SignalKind::Gaussian
}

impl ExperimentPlan {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let plan: Self =
            toml::from_str(text).map_err(|e| crate::error::SparseError::Format(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        if self.k_values.is_empty() {
            return Err(invalid("k_values must not be empty"));
        }
        if let Some(&k) = self.k_values.iter().find(|&&k| k == 0 || k > self.matrix.m) {
            return Err(invalid(format!("k = {k} outside [1, {}]", self.matrix.m)));
        }
        if self.matrix.n == 0 || self.matrix.m == 0 {
            return Err(invalid("matrix shape must be positive"));
        }
        if self.matrix.ensemble == Ensemble::File && self.matrix.path.is_none() {
            return Err(invalid("file ensemble needs matrix.path"));
        }
        self.noise.validate()?;
        if self.solvers.is_empty() {
            return Err(invalid("at least one solver is required"));
        }
        let mut labels = HashSet::new();
        for s in &self.solvers {
            s.kind()?;
            if !labels.insert(s.label()) {
                return Err(invalid(format!("duplicate solver label `{}`", s.label())));
            }
        }
        Ok(())
    }
}

/// Aggregate of one (solver, k) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub solver: String,
    pub k: usize,
    pub trials: usize,
    pub epsr: f64,
    pub mean_mse: f64,
    pub mean_wall_ms: f64,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub labels: Vec<String>,
    pub k_values: Vec<usize>,
    /// Sorted by solver (plan order), then `k`, then trial.
    pub records: Vec<TrialRecord>,
    pub cells: Vec<CellSummary>,
}

impl SweepReport {
    pub fn cell(&self, solver: &str, k: usize) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.solver == solver && c.k == k)
    }

    /// EPSR per `k` for one solver, in `k_values` order.
    pub fn epsr_curve(&self, solver: &str) -> Vec<f64> {
        self.k_values
            .iter()
            .filter_map(|&k| self.cell(solver, k).map(|c| c.epsr))
            .collect()
    }
}

struct Problem {
    a: DesignMatrix,
    x_true: SparseSolution,
    b: Vec<f64>,
}

fn build_problem(
    plan: &ExperimentPlan,
    shared: Option<&DesignMatrix>,
    k: usize,
    seed: u64,
) -> Result<Problem> {
    let a = match shared {
        Some(a) => a.clone(),
        None => gen_matrix(plan.matrix.n, plan.matrix.m, derive_seed(seed, &[0]))?,
    };
    let x_true = gen_signal(SignalSpec {
        kind: plan.signal,
        k,
        m: a.m(),
        seed: derive_seed(seed, &[1]),
    })?;
    let mut b = matvec(&a, &x_true)?;
    add_noise(&mut b, plan.noise, derive_seed(seed, &[2]));
    Ok(Problem { a, x_true, b })
}

fn run_trial(
    plan: &ExperimentPlan,
    shared: Option<&DesignMatrix>,
    k: usize,
    trial: usize,
) -> Vec<TrialRecord> {
    let seed = derive_seed(plan.seed, &[k as u64, trial as u64]);
    let (n, m) = (plan.matrix.n, plan.matrix.m);
    let problem = build_problem(plan, shared, k, seed);
    plan.solvers
        .iter()
        .map(|spec| {
            let mut record = TrialRecord {
                solver: spec.label().to_string(),
                k,
                n,
                m,
                trial,
                seed,
                success: false,
                mse: 0.0,
                residual: 0.0,
                sparsity_out: 0,
                wall_ms: 0.0,
                error: None,
            };
            let outcome = problem.as_ref().map_err(|e| e.to_string()).and_then(|p| {
                let started = Instant::now();
                let out = spec
                    .resolve(&p.a, &p.b, Some(k))
                    .and_then(|s| run_solver(&s, &p.a, &p.b))
                    .map_err(|e| e.to_string())?;
                record.wall_ms = started.elapsed().as_secs_f64() * 1e3;
                let rec = evaluate_recovery(&p.a, &p.b, &out.solution, &p.x_true)
                    .map_err(|e| e.to_string())?;
                Ok((out, rec))
            });
            match outcome {
                Ok((out, rec)) => {
                    record.success = rec.success;
                    record.mse = rec.mse;
                    record.residual = rec.residual;
                    record.sparsity_out = out.solution.nnz();
                }
                Err(msg) => {
                    log::warn!("{} failed at k = {k}, trial {trial}: {msg}", spec.label());
                    if let Ok(p) = &problem {
                        record.mse = mse(&SparseSolution::zeros(m), &p.x_true).unwrap_or(0.0);
                        record.residual = norm2(&p.b);
                    }
                    record.error = Some(msg);
                }
            }
            record
        })
        .collect()
}

/// Runs every (solver, k, trial) cell. Each trial draws its own problem
/// from a seed derived from `(plan.seed, k, trial)`, so results do not
/// depend on `exec` or scheduling. Solver errors are recorded, not raised.
pub fn run_plan(plan: &ExperimentPlan, exec: Execution) -> Result<SweepReport> {
    plan.validate()?;
    let shared = match plan.matrix.ensemble {
        Ensemble::File => {
            let a = load_design(plan.matrix.path.as_ref().expect("validated"))?;
            if (a.n(), a.m()) != (plan.matrix.n, plan.matrix.m) {
                return Err(invalid(format!(
                    "matrix file is {}x{}, plan says {}x{}",
                    a.n(),
                    a.m(),
                    plan.matrix.n,
                    plan.matrix.m
                )));
            }
            Some(a)
        }
        Ensemble::Gaussian if !plan.matrix.fresh_per_trial => {
            Some(gen_matrix(plan.matrix.n, plan.matrix.m, plan.seed)?)
        }
        Ensemble::Gaussian => None,
    };
    let tasks: Vec<(usize, usize)> = plan
        .k_values
        .iter()
        .flat_map(|&k| (0..plan.trials).map(move |t| (k, t)))
        .collect();
    let per_task = map_indexed(tasks.len(), exec, |i| {
        let (k, t) = tasks[i];
        run_trial(plan, shared.as_ref(), k, t)
    });
    let labels: Vec<String> = plan.solvers.iter().map(|s| s.label().to_string()).collect();
    let order = |label: &str| labels.iter().position(|l| l == label).unwrap_or(usize::MAX);
    let mut records: Vec<TrialRecord> = per_task.into_iter().flatten().collect();
    records.sort_by(|x, y| (order(&x.solver), x.k, x.trial).cmp(&(order(&y.solver), y.k, y.trial)));

    let mut cells = Vec::new();
    for label in &labels {
        for &k in &plan.k_values {
            let group: Vec<TrialRecord> = records
                .iter()
                .filter(|r| &r.solver == label && r.k == k)
                .cloned()
                .collect();
            let count = group.len() as f64;
            cells.push(CellSummary {
                solver: label.clone(),
                k,
                trials: group.len(),
                epsr: epsr(&group)?,
                mean_mse: group.iter().map(|r| r.mse).sum::<f64>() / count,
                mean_wall_ms: group.iter().map(|r| r.wall_ms).sum::<f64>() / count,
                failures: group.iter().filter(|r| r.error.is_some()).count(),
            });
        }
    }
    Ok(SweepReport {
        labels,
        k_values: plan.k_values.clone(),
        records,
        cells,
    })
}

/// Writes `trials.csv` (deterministic), `timings.csv`, `cells.csv` and the
/// plot series `epsr_curve.csv` and `mse_curve.csv` into `dir`.
pub fn write_report(report: &SweepReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;

    let mut trials = csv::Writer::from_path(dir.join("trials.csv"))?;
    trials.write_record([
        "solver",
        "k",
        "n",
        "m",
        "trial",
        "seed",
        "success",
        "mse",
        "residual",
        "sparsity_out",
        "error",
    ])?;
    for r in &report.records {
        trials.write_record(&[
            r.solver.clone(),
            r.k.to_string(),
            r.n.to_string(),
            r.m.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            u8::from(r.success).to_string(),
            format!("{:e}", r.mse),
            format!("{:e}", r.residual),
            r.sparsity_out.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    trials.flush()?;

    let mut timings = csv::Writer::from_path(dir.join("timings.csv"))?;
    timings.write_record(["solver", "k", "trial", "wall_ms"])?;
    for r in &report.records {
        timings.write_record(&[
            r.solver.clone(),
            r.k.to_string(),
            r.trial.to_string(),
            format!("{:.4}", r.wall_ms),
        ])?;
    }
    timings.flush()?;

    let mut cells = csv::Writer::from_path(dir.join("cells.csv"))?;
    cells.write_record([
        "solver",
        "k",
        "trials",
        "epsr",
        "mean_mse",
        "mean_wall_ms",
        "failures",
    ])?;
    for c in &report.cells {
        cells.write_record(&[
            c.solver.clone(),
            c.k.to_string(),
            c.trials.to_string(),
            c.epsr.to_string(),
            format!("{:e}", c.mean_mse),
            format!("{:.4}", c.mean_wall_ms),
            c.failures.to_string(),
        ])?;
    }
    cells.flush()?;

    for (file, pick) in [
        (
            "epsr_curve.csv",
            (|c: &CellSummary| c.epsr.to_string()) as fn(&CellSummary) -> String,
        ),
        ("mse_curve.csv", |c: &CellSummary| {
            format!("{:e}", c.mean_mse)
        }),
    ] {
        let mut out = csv::Writer::from_path(dir.join(file))?;
        let mut header = vec!["k".to_string()];
        header.extend(report.labels.iter().cloned());
        out.write_record(&header)?;
        for &k in &report.k_values {
            let mut row = vec![k.to_string()];
            row.extend(
                report
                    .labels
                    .iter()
                    .map(|l| report.cell(l, k).map(pick).unwrap_or_default()),
            );
            out.write_record(&row)?;
        }
        out.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const PLAN: &str = r#"
seed = 3
trials = 1
k_values = [2]
signal = "zero_one"

[matrix]
n = 16
m = 32

[noise]
kind = "uniform"
amplitude = 0.001

[[solvers]]
name = "gmp"
"#;

    #[test]
    fn single_cell_gives_single_record() {
        let plan = ExperimentPlan::from_toml_str(PLAN).unwrap();
        let report = run_plan(&plan, Execution::Sequential).unwrap();
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.cells.len(), 1);
        assert_eq!(report.records[0].solver, "gmp");
    }

    #[test]
    fn invalid_plans_rejected() {
        assert!(ExperimentPlan::from_toml_str(&PLAN.replace("trials = 1", "trials = 0")).is_err());
        assert!(
            ExperimentPlan::from_toml_str(&PLAN.replace("name = \"gmp\"", "name = \"lars\""))
                .is_err()
        );
        assert!(
            ExperimentPlan::from_toml_str(&PLAN.replace("k_values = [2]", "k_values = [33]"))
                .is_err()
        );
        assert!(
            ExperimentPlan::from_toml_str(&PLAN.replace("seed = 3", "seed = 3\nbogus = 1"))
                .is_err()
        );
    }
}
