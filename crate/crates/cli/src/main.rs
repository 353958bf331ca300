use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gmp_core::batch::{
    build_gram, decode_batch, write_batch_solutions, write_batch_summary, BatchDecoder,
};
use gmp_core::gmp::{default_stops, StopRule};
use gmp_core::harness::{
    estimate_rip, gen_matrix, gen_nonrip, run_plan, run_solver, write_report, ExperimentPlan,
    Rounding, SolverKind, SolverSpec,
};
use gmp_core::io::{load_design, load_matrix, load_vector};
use gmp_core::linalg::norm2;
use gmp_core::src_classifier::{
    downsample, evaluate, read_labels, resplit, write_predictions,
    write_report as write_classify_report, ClassifierConfig, Dataset,
};
use gmp_core::{matrix, Execution, GmpConfig};

#[derive(Parser)]
#[command(
    name = "gmp",
    version,
    about = "Sparse recovery by general matching pursuit"
)]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Recover one signal with one solver.
    Solve(SolveArgs),
    /// Run a recovery sweep described by a TOML plan.
    Sweep(SweepArgs),
    /// GMP and SGMP against SP and NIHT on a dictionary with duplicated columns.
    Nonrip(NonripArgs),
    /// Exhaustive restricted-eigenvalue estimate.
    Rip(RipArgs),
    /// Decode every column of a signal matrix against one dictionary.
    Batch(BatchArgs),
    /// Sparse-representation classification of a labeled dataset.
    Classify(ClassifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum RoundingArg {
    /// ⌈n / (r ln m)⌉
    Ceil,
    /// Round n / (r ln m) to the nearest integer (gives 28 for n = 1024, m = 8192, r = 4).
    Nearest,
}

impl From<RoundingArg> for Rounding {
    fn from(r: RoundingArg) -> Self {
        match r {
            RoundingArg::Ceil => Rounding::Ceil,
            RoundingArg::Nearest => Rounding::Nearest,
        }
    }
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Atoms added per outer iteration.
    #[arg(long)]
    rho: Option<usize>,
    /// Derive ϱ from n / (r ln m) with this r (at least 3).
    #[arg(long, conflicts_with = "rho")]
    rho_r: Option<f64>,
    /// Rounding used with --rho-r.
    #[arg(long, value_enum, default_value = "ceil")]
    rounding: RoundingArg,
    /// Subspace exploration factor for SGMP / BGMP.
    #[arg(long, default_value_t = 1)]
    omega: usize,
    /// ℓ1 weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// ℓ1 weight as a multiple of ‖Aᵀb‖∞ (0.005 is the usual default).
    #[arg(long, conflicts_with = "lambda")]
    lambda_factor: Option<f64>,
    /// Stop when 2δ/‖b‖² falls to this value.
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    /// Also stop when ‖b − Ax‖ ≤ tol·‖b‖.
    #[arg(long)]
    residual_tol: Option<f64>,
    /// Sparsity estimate for OMP, SP, OMPR, NIHT and BOMP.
    #[arg(long)]
    k_hat: Option<usize>,
    /// Support size cap for the GMP family (default min(n, 600)).
    #[arg(long)]
    max_atoms: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    max_outer: usize,
    #[arg(long, default_value_t = 50)]
    max_inner: usize,
    #[arg(long, default_value_t = 1e-6)]
    inner_tol: f64,
    /// OMPR step size.
    #[arg(long, default_value_t = 0.7)]
    eta: f64,
    /// Ridge weight for l2l2.
    #[arg(long, default_value_t = 1e-3)]
    ridge_lambda: f64,
}

impl SolverArgs {
    fn gmp_config(&self) -> GmpConfig {
        GmpConfig {
            rho: self.rho.unwrap_or(1),
            omega: self.omega,
            lambda: self.lambda.unwrap_or(0.0),
            epsilon: self.epsilon,
            max_outer: self.max_outer,
            max_inner: self.max_inner,
            max_atoms: self.max_atoms,
            inner_tol: self.inner_tol,
        }
    }

    fn spec(&self, kind: SolverKind) -> SolverSpec {
        let mut spec = SolverSpec::new(kind);
        spec.gmp = self.gmp_config();
        spec.rho_r = self.rho_r;
        spec.rho_rounding = self.rounding.into();
        spec.lambda_factor = self.lambda_factor;
        spec.k_hat = self.k_hat;
        spec.residual_tol = self.residual_tol;
        spec.baseline.eta = self.eta;
        spec.baseline.ridge_lambda = self.ridge_lambda;
        spec
    }
}

#[derive(Args)]
struct SolveArgs {
    /// Dictionary (SPMX or CSV, one measurement per row).
    #[arg(long)]
    matrix: PathBuf,
    /// Measurement vector (SPMX or CSV, a single row or column).
    #[arg(long)]
    signal: PathBuf,
    /// One of omp, bomp, sp, ompr, ompra, niht, pg-lasso, l2, l2l2, gmp, sgmp, bgmp.
    #[arg(long, default_value = "gmp")]
    solver: String,
    #[command(flatten)]
    solver_args: SolverArgs,
    /// Write `atom_index,value` rows here (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the per-iteration trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML plan.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output.dir` from the plan.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct NonripArgs {
    #[arg(long, default_value_t = 128)]
    n: usize,
    #[arg(long, default_value_t = 512)]
    m: usize,
    /// Number of duplicated leading columns.
    #[arg(long, default_value_t = 16)]
    dup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// ϱ rule parameter r in n / (r ln m).
    #[arg(long, default_value_t = 4.0)]
    rho_r: f64,
    /// SGMP exploration factor.
    #[arg(long, default_value_t = 4)]
    omega: usize,
    /// Directory for the summary and objective traces.
    #[arg(long, default_value = "nonrip-out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RipArgs {
    /// Dictionary file; a Gaussian matrix is drawn when omitted.
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long, default_value_t = 8, conflicts_with = "matrix")]
    n: usize,
    #[arg(long, default_value_t = 12, conflicts_with = "matrix")]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Support sizes to scan.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    k: Vec<usize>,
    /// Refuse when C(m, k) exceeds this.
    #[arg(long, default_value_t = gmp_core::harness::DEFAULT_RIP_CAP)]
    cap: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecoderArg {
    Bgmp,
    Bomp,
}

#[derive(Args)]
struct BatchArgs {
    /// Dictionary (SPMX or CSV).
    #[arg(long)]
    matrix: PathBuf,
    /// Signals as columns (SPMX or CSV).
    #[arg(long)]
    signals: PathBuf,
    #[arg(long, value_enum, default_value = "bgmp")]
    decoder: DecoderArg,
    /// Atom count for BOMP.
    #[arg(long, default_value_t = 60)]
    k: usize,
    #[command(flatten)]
    solver_args: SolverArgs,
    /// `signal_id,support_size,residual_norm,wall_ms`.
    #[arg(long, default_value = "batch_summary.csv")]
    out: PathBuf,
    /// `signal_id,atom_index,value`.
    #[arg(long, default_value = "batch_solutions.csv")]
    solutions: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Samples as columns (SPMX or CSV).
    #[arg(long)]
    data: PathBuf,
    /// `column_index,class_id,split` sidecar.
    #[arg(long)]
    labels: PathBuf,
    /// One of bgmp, bomp, pg-lasso, l2, l2l2.
    #[arg(long, default_value = "bgmp")]
    solver: String,
    /// Down-sampling rate; needs --height and --width when below 1.
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    /// Image height of each vectorized column (row-major grid).
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// Re-split each class with this training fraction instead of using the sidecar split.
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Atoms per BGMP iteration.
    #[arg(long, default_value_t = 10)]
    rho: usize,
    /// BGMP residual target relative to ‖y‖.
    #[arg(long, default_value_t = 1e-3)]
    residual_tol: f64,
    /// Atom count for BOMP.
    #[arg(long, default_value_t = 200)]
    bomp_k: usize,
    #[arg(long, default_value = "classify_report.csv")]
    report: PathBuf,
    #[arg(long, default_value = "classify_predictions.csv")]
    predictions: PathBuf,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn create(path: &Path) -> Result<File> {
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn solve(args: SolveArgs) -> Result<()> {
    let a =
        load_design(&args.matrix).with_context(|| format!("loading {}", args.matrix.display()))?;
    let b =
        load_vector(&args.signal).with_context(|| format!("loading {}", args.signal.display()))?;
    let kind: SolverKind = args.solver.parse()?;
    let solver = args.solver_args.spec(kind).resolve(&a, &b, None)?;
    let out = run_solver(&solver, &a, &b)?;
    if let Some(w) = &out.warning {
        log::warn!("{w}");
    }
    let r = matrix::residual(&a, &b, &out.solution)?;
    eprintln!(
        "{kind}: {} nonzeros, residual {:.6e} ({:.3e} relative)",
        out.solution.nnz(),
        r.norm(),
        r.norm() / norm2(&b).max(f64::MIN_POSITIVE)
    );
    let mut w = csv::Writer::from_writer(output(args.out.as_deref())?);
    w.write_record(["atom_index", "value"])?;
    for (&j, &v) in out.solution.support().iter().zip(out.solution.values()) {
        w.write_record(&[j.to_string(), format!("{v:e}")])?;
    }
    w.flush()?;
    if let Some(path) = &args.trace {
        match &out.trace {
            Some(t) => t.write_csv(create(path)?)?,
            None => bail!("solver {kind} does not produce an iteration trace"),
        }
    }
    Ok(())
}

fn sweep(args: SweepArgs, exec: Execution) -> Result<()> {
    let plan = ExperimentPlan::load(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let dir = args.out_dir.unwrap_or_else(|| plan.output.dir.clone());
    let report = run_plan(&plan, exec)?;
    write_report(&report, &dir)?;
    for c in &report.cells {
        eprintln!(
            "{:>10} k={:<4} epsr={:.2} mean_ms={:.2}",
            c.solver, c.k, c.epsr, c.mean_wall_ms
        );
    }
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn nonrip(args: NonripArgs) -> Result<()> {
    let (a, _, b) = gen_nonrip(args.n, args.m, args.dup, args.seed)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let mut summary = csv::Writer::from_writer(create(&args.out_dir.join("nonrip.csv"))?);
    summary.write_record([
        "solver",
        "residual",
        "relative_residual",
        "sparsity",
        "iterations",
        "status",
    ])?;
    let b_norm = norm2(&b);
    let specs = [
        (SolverKind::Gmp, 1),
        (SolverKind::Sgmp, args.omega),
        (SolverKind::Sp, 1),
        (SolverKind::Niht, 1),
    ];
    for (kind, omega) in specs {
        let mut spec = SolverSpec::new(kind);
        spec.rho_r = Some(args.rho_r);
        spec.gmp.omega = omega;
        spec.gmp.max_inner = 200;
        spec.gmp.inner_tol = 1e-10;
        spec.k_hat = Some(args.dup);
        spec.residual_tol = Some(1e-6);
        let solver = spec.resolve(&a, &b, None)?;
        let out = run_solver(&solver, &a, &b)?;
        let res = matrix::residual(&a, &b, &out.solution)?.norm();
        let trace = out.trace.as_ref().context("missing trace")?;
        summary.write_record(&[
            kind.name().to_string(),
            format!("{res:e}"),
            format!("{:e}", res / b_norm),
            out.solution.nnz().to_string(),
            trace.outer_iterations().to_string(),
            format!("{:?}", trace.status),
        ])?;
        trace.write_csv(create(
            &args.out_dir.join(format!("{}_trace.csv", kind.name())),
        )?)?;
        eprintln!(
            "{kind}: residual/‖b‖ = {:.3e}, {} nonzeros",
            res / b_norm,
            out.solution.nnz()
        );
    }
    summary.flush()?;
    Ok(())
}

fn rip(args: RipArgs) -> Result<()> {
    let a = match &args.matrix {
        Some(p) => load_design(p)?,
        None => gen_matrix(args.n, args.m, args.seed)?,
    };
    let mut w = csv::Writer::from_writer(output(args.out.as_deref())?);
    w.write_record([
        "k",
        "delta",
        "gamma_minus",
        "gamma_plus",
        "kappa",
        "supports",
    ])?;
    for &k in &args.k {
        let r = estimate_rip(&a, k, args.cap)?;
        w.write_record(&[
            k.to_string(),
            format!("{:e}", r.delta),
            format!("{:e}", r.gamma_minus),
            format!("{:e}", r.gamma_plus),
            format!("{:e}", r.kappa),
            r.supports.to_string(),
        ])?;
    }
    w.flush()?;
    eprintln!("columns were scaled to unit norm before the scan");
    Ok(())
}

fn batch(args: BatchArgs, exec: Execution) -> Result<()> {
    let a = load_design(&args.matrix)?;
    let signals = load_matrix(&args.signals)?;
    let cache = build_gram(&a)?;
    let decoder = match args.decoder {
        DecoderArg::Bgmp => {
            let cfg = GmpConfig {
                rho: match args.solver_args.rho_r {
                    Some(r) => gmp_core::harness::default_rho(
                        a.n(),
                        a.m(),
                        r,
                        args.solver_args.rounding.into(),
                    )?,
                    None => args.solver_args.rho.unwrap_or(1),
                },
                ..args.solver_args.gmp_config()
            };
            cfg.validate()?;
            let stops: Vec<StopRule> = default_stops(&cfg);
            BatchDecoder::Bgmp { cfg, stops }
        }
        DecoderArg::Bomp => BatchDecoder::Bomp { k: args.k },
    };
    let records = decode_batch(&a, &cache, &signals, &decoder, exec)?;
    write_batch_summary(&records, create(&args.out)?)?;
    write_batch_solutions(&records, create(&args.solutions)?)?;
    eprintln!("decoded {} signals", records.len());
    Ok(())
}

fn classify(args: ClassifyArgs, exec: Execution) -> Result<()> {
    let mut data = load_matrix(&args.data)?;
    if args.rate < 1.0 {
        let (Some(h), Some(w)) = (args.height, args.width) else {
            bail!("--rate below 1 needs --height and --width");
        };
        data = downsample(&data, h, w, args.rate)?;
    }
    let mut labels = read_labels(
        File::open(&args.labels).with_context(|| format!("opening {}", args.labels.display()))?,
    )?;
    if let Some(frac) = args.train_frac {
        labels = resplit(&labels, frac, args.seed)?;
    }
    let ds = Dataset::from_labels(&data, &labels)?;
    let dict = ds.dictionary()?;
    let mut cfg = ClassifierConfig::with_solver(args.solver.parse()?);
    cfg.gmp.rho = args.rho;
    cfg.residual_tol = args.residual_tol;
    cfg.bomp_k = args.bomp_k;
    let (report, predictions) = evaluate(&dict, &ds.test, &ds.test_labels, &cfg, exec)?;
    write_classify_report(&report, create(&args.report)?)?;
    write_predictions(&predictions, create(&args.predictions)?)?;
    eprintln!(
        "{}: accuracy {:.4} ({} / {}), mean sparsity {:.1}",
        report.solver, report.accuracy, report.correct, report.total, report.mean_sparsity
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match cli.command {
        Command::Solve(args) => solve(args),
        Command::Sweep(args) => sweep(args, exec),
        Command::Nonrip(args) => nonrip(args),
        Command::Rip(args) => rip(args),
        Command::Batch(args) => batch(args, exec),
        Command::Classify(args) => classify(args, exec),
    }
}
