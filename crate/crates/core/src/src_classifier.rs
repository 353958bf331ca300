//! Sparse-representation classification: code a test vector over labeled
//! training columns and assign the class whose columns alone reconstruct it
//! best.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::baselines::{pg_lasso_full, L2Operator, RidgeOperator};
use crate::batch::{bgmp_solve, bomp_solve, build_gram, BatchSignal, GramCache};
use crate::config::GmpConfig;
use crate::error::{check_len, invalid, Result, SparseError};
use crate::gmp::StopRule;
use crate::harness::{default_lambda, SolverKind};
use crate::linalg::{axpy, norm2, norm2_sq};
use crate::matrix::DesignMatrix;
use crate::par::{map_indexed, Execution};
use crate::solution::SparseSolution;
use crate::trace::SolveStatus;

/// Training columns (unit-normalized on construction) with class labels.
#[derive(Debug, Clone)]
pub struct LabeledDictionary {
    a: DesignMatrix,
    labels: Vec<usize>,
    class_index: BTreeMap<usize, Vec<usize>>,
}

impl LabeledDictionary {
    pub fn new(a: DesignMatrix, labels: Vec<usize>) -> Result<Self> {
        check_len("label count", a.m(), labels.len())?;
        if let Some(j) = a.col_norms().iter().position(|&c| c == 0.0) {
            return Err(invalid(format!("training column {j} is zero")));
        }
        let mut class_index: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (j, &c) in labels.iter().enumerate() {
            class_index.entry(c).or_default().push(j);
        }
        if class_index.len() < 2 {
            return Err(invalid("need at least two classes"));
        }
        let (a, _) = a.normalized();
        Ok(Self {
            a,
            labels,
            class_index,
        })
    }

    pub fn a(&self) -> &DesignMatrix {
        &self.a
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.class_index.keys().copied()
    }

    pub fn class_columns(&self, class: usize) -> &[usize] {
        self.class_index.get(&class).map_or(&[], Vec::as_slice)
    }
}

/// Solver choice and settings for classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    /// One of `bgmp`, `bomp`, `pg-lasso`, `l2`, `l2l2`.
    pub solver: String,
    pub gmp: GmpConfig,
    /// BGMP stops once `‖y − Ax‖ ≤ residual_tol · ‖y‖`.
    pub residual_tol: f64,
    /// Atom count for BOMP.
    pub bomp_k: usize,
    /// PG-LASSO weight as a multiple of `0.005‖Aᵀy‖_∞`.
    pub lasso_factor: f64,
    pub lasso_max_iter: usize,
    pub ridge_lambda: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            solver: SolverKind::Bgmp.name().to_string(),
            gmp: GmpConfig {
                rho: 10,
                ..GmpConfig::default()
            },
            residual_tol: 1e-3,
            bomp_k: 200,
            lasso_factor: 1.0,
            lasso_max_iter: 5000,
            ridge_lambda: 1e-3,
        }
    }
}

impl ClassifierConfig {
    pub fn with_solver(solver: SolverKind) -> Self {
        Self {
            solver: solver.name().to_string(),
            ..Self::default()
        }
    }
}

/// The outcome for one test vector.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub class: usize,
    pub code: SparseSolution,
    /// Nonzero count for sparse codes, `m` for dense regressions.
    pub sparsity: usize,
    /// `(class, ‖y − A δ_c(x)‖)` in ascending class order.
    pub class_residuals: Vec<(usize, f64)>,
    /// The atom cap ended the solve before the residual target was met.
    pub capped: bool,
}

enum Prepared {
    Gram(GramCache),
    L2(L2Operator),
    Ridge(RidgeOperator),
    Lasso,
}

/// A dictionary with the per-solver precomputation (Gram matrix or
/// regression operator) done once and shared by every test vector.
pub struct Classifier<'d> {
    dict: &'d LabeledDictionary,
    cfg: ClassifierConfig,
    kind: SolverKind,
    prepared: Prepared,
}

impl<'d> Classifier<'d> {
    pub fn new(dict: &'d LabeledDictionary, cfg: ClassifierConfig) -> Result<Self> {
        let kind: SolverKind = cfg.solver.parse()?;
        cfg.gmp.validate()?;
        let prepared = match kind {
            SolverKind::Bgmp | SolverKind::Bomp => Prepared::Gram(build_gram(dict.a())?),
            SolverKind::L2 => Prepared::L2(L2Operator::new(dict.a())?),
            SolverKind::L2L2 => Prepared::Ridge(RidgeOperator::new(dict.a(), cfg.ridge_lambda)?),
            SolverKind::PgLasso => Prepared::Lasso,
            other => {
                return Err(invalid(format!(
                    "solver `{other}` is not available for classification"
                )))
            }
        };
        Ok(Self {
            dict,
            cfg,
            kind,
            prepared,
        })
    }

    pub fn dictionary(&self) -> &LabeledDictionary {
        self.dict
    }

    pub fn solver(&self) -> SolverKind {
        self.kind
    }

    pub fn classify(&self, y: &[f64]) -> Result<Prediction> {
        let a = self.dict.a();
        check_len("test vector", a.n(), y.len())?;
        let mut capped = false;
        let code = match &self.prepared {
            Prepared::Gram(cache) => {
                let signal = BatchSignal::new(a, y)?;
                if self.kind == SolverKind::Bgmp {
                    let mut stops = vec![StopRule::RelativeDelta {
                        epsilon: self.cfg.gmp.epsilon,
                    }];
                    if self.cfg.residual_tol > 0.0 {
                        stops.push(StopRule::ResidualNorm {
                            r_2: self.cfg.residual_tol * norm2(y),
                        });
                    }
                    let (x, trace) = bgmp_solve(cache, &signal, &self.cfg.gmp, &stops)?;
                    capped = trace.status == SolveStatus::Capped;
                    x
                } else {
                    bomp_solve(cache, &signal, self.cfg.bomp_k.min(a.m()))?.solution
                }
            }
            Prepared::L2(op) => SparseSolution::from_dense(&op.apply(y)?.coeffs),
            Prepared::Ridge(op) => SparseSolution::from_dense(&op.apply(y)?.coeffs),
            Prepared::Lasso => {
                let lambda = self.cfg.lasso_factor * default_lambda(a, y)?;
                if lambda == 0.0 {
                    SparseSolution::zeros(a.m())
                } else {
                    pg_lasso_full(
                        a,
                        y,
                        lambda,
                        self.cfg.gmp.inner_tol,
                        self.cfg.lasso_max_iter,
                    )?
                    .solution
                }
            }
        };
        let dense = self.kind.is_dense();
        let class_residuals: Vec<(usize, f64)> = self
            .dict
            .classes()
            .map(|c| {
                let mut r = y.to_vec();
                for (&j, &v) in code.support().iter().zip(code.values()) {
                    if self.dict.labels[j] == c {
                        axpy(-v, a.column(j), &mut r);
                    }
                }
                (c, norm2_sq(&r).sqrt())
            })
            .collect();
        let class = class_residuals
            .iter()
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .map(|&(c, _)| c)
            .expect("at least two classes");
        Ok(Prediction {
            class,
            sparsity: if dense { a.m() } else { code.nnz() },
            code,
            class_residuals,
            capped,
        })
    }
}

/// Builds a [`Classifier`] and classifies a single vector.
pub fn classify(dict: &LabeledDictionary, y: &[f64], cfg: &ClassifierConfig) -> Result<Prediction> {
    Classifier::new(dict, cfg.clone())?.classify(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePrediction {
    pub sample_id: usize,
    pub true_class: usize,
    /// `None` when the solve failed.
    pub predicted: Option<usize>,
    pub sparsity: usize,
    pub wall_ms: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyReport {
    pub solver: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub mean_sparsity: f64,
    pub per_class_accuracy: BTreeMap<usize, f64>,
    pub total_wall_ms: f64,
}

/// Classifies every column of `test`. Failed samples count as wrong.
pub fn evaluate(
    dict: &LabeledDictionary,
    test: &DMatrix<f64>,
    test_labels: &[usize],
    cfg: &ClassifierConfig,
    exec: Execution,
) -> Result<(ClassifyReport, Vec<SamplePrediction>)> {
    check_len("test label count", test.ncols(), test_labels.len())?;
    if test.ncols() == 0 {
        return Err(invalid("test set is empty"));
    }
    check_len("test vector length", dict.a().n(), test.nrows())?;
    let started = Instant::now();
    let classifier = Classifier::new(dict, cfg.clone())?;
    let predictions = map_indexed(test.ncols(), exec, |s| {
        let t0 = Instant::now();
        let outcome = classifier.classify(test.column(s).as_slice());
        let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
        match outcome {
            Ok(p) => SamplePrediction {
                sample_id: s,
                true_class: test_labels[s],
                predicted: Some(p.class),
                sparsity: p.sparsity,
                wall_ms,
                error: None,
            },
            Err(e) => {
                log::warn!("sample {s} failed: {e}");
                SamplePrediction {
                    sample_id: s,
                    true_class: test_labels[s],
                    predicted: None,
                    sparsity: 0,
                    wall_ms,
                    error: Some(e.to_string()),
                }
            }
        }
    });
    let total = predictions.len();
    let correct = predictions
        .iter()
        .filter(|p| p.predicted == Some(p.true_class))
        .count();
    let mut per_class: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for p in &predictions {
        let e = per_class.entry(p.true_class).or_default();
        e.1 += 1;
        if p.predicted == Some(p.true_class) {
            e.0 += 1;
        }
    }
    let report = ClassifyReport {
        solver: classifier.solver().name().to_string(),
        correct,
        total,
        accuracy: correct as f64 / total as f64,
        mean_sparsity: predictions.iter().map(|p| p.sparsity as f64).sum::<f64>() / total as f64,
        per_class_accuracy: per_class
            .into_iter()
            .map(|(c, (h, t))| (c, h as f64 / t as f64))
            .collect(),
        total_wall_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    Ok((report, predictions))
}

/// Writes the report as `metric,value` rows, with one
/// `class_<id>_accuracy` row per class.
pub fn write_report<W: Write>(report: &ClassifyReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["metric", "value"])?;
    let rows = [
        ("solver", report.solver.clone()),
        ("accuracy", report.accuracy.to_string()),
        ("correct", report.correct.to_string()),
        ("total", report.total.to_string()),
        ("mean_sparsity", report.mean_sparsity.to_string()),
        ("total_wall_ms", format!("{:.4}", report.total_wall_ms)),
    ];
    for (k, v) in rows {
        out.write_record([k, v.as_str()])?;
    }
    for (c, acc) in &report.per_class_accuracy {
        out.write_record([format!("class_{c}_accuracy"), acc.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_predictions<W: Write>(predictions: &[SamplePrediction], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "sample_id",
        "true_class",
        "predicted_class",
        "sparsity",
        "wall_ms",
        "error",
    ])?;
    for p in predictions {
        out.write_record(&[
            p.sample_id.to_string(),
            p.true_class.to_string(),
            p.predicted.map(|c| c.to_string()).unwrap_or_default(),
            p.sparsity.to_string(),
            format!("{:.4}", p.wall_ms),
            p.error.clone().unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Keeps every `⌈1/rate⌉`-th row and column of each column vector, read as
/// an `h × w` grid stored row by row.
pub fn downsample(x: &DMatrix<f64>, h: usize, w: usize, rate: f64) -> Result<DMatrix<f64>> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(invalid(format!("rate must lie in (0, 1], got {rate}")));
    }
    if h == 0 || w == 0 {
        return Err(invalid("image grid is empty"));
    }
    check_len("vectorized image length", h * w, x.nrows())?;
    let stride = (1.0 / rate - 1e-9).ceil().max(1.0) as usize;
    let rows: Vec<usize> = (0..h).step_by(stride).collect();
    let cols: Vec<usize> = (0..w).step_by(stride).collect();
    let keep: Vec<usize> = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| r * w + c))
        .collect();
    Ok(DMatrix::from_fn(keep.len(), x.ncols(), |i, j| {
        x[(keep[i], j)]
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One row of the label sidecar: `column_index,class_id,split`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub column_index: usize,
    pub class_id: usize,
    pub split: Split,
}

pub fn read_labels<R: Read>(r: R) -> Result<Vec<LabelRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let records = reader
        .deserialize()
        .collect::<std::result::Result<Vec<LabelRecord>, _>>()?;
    Ok(records)
}

pub fn write_labels<W: Write>(labels: &[LabelRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for l in labels {
        out.serialize(l)?;
    }
    out.flush()?;
    Ok(())
}

/// Reassigns splits so that, per class, `⌊train_frac · count⌉` columns
/// (at least one) are used for training.
pub fn resplit(labels: &[LabelRecord], train_frac: f64, seed: u64) -> Result<Vec<LabelRecord>> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(invalid(format!(
            "train fraction must lie in (0, 1), got {train_frac}"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(l.class_id).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = labels.to_vec();
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        let n_train =
            ((train_frac * members.len() as f64).round() as usize).clamp(1, members.len());
        for (rank, &i) in members.iter().enumerate() {
            out[i].split = if rank < n_train {
                Split::Train
            } else {
                Split::Test
            };
        }
    }
    Ok(out)
}

/// Training and test columns with their labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: DMatrix<f64>,
    pub train_labels: Vec<usize>,
    pub test: DMatrix<f64>,
    pub test_labels: Vec<usize>,
}

impl Dataset {
    /// Splits the columns of `data` according to `labels`. Every column must
    /// be labeled exactly once.
    pub fn from_labels(data: &DMatrix<f64>, labels: &[LabelRecord]) -> Result<Self> {
        let mut seen = vec![false; data.ncols()];
        for l in labels {
            let slot = seen
                .get_mut(l.column_index)
                .ok_or(SparseError::IndexOutOfRange {
                    index: l.column_index,
                    m: data.ncols(),
                })?;
            if std::mem::replace(slot, true) {
                return Err(invalid(format!("column {} labeled twice", l.column_index)));
            }
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(invalid(format!("column {j} has no label")));
        }
        let mut sorted = labels.to_vec();
        sorted.sort_by_key(|l| l.column_index);
        let pick = |split: Split| -> (DMatrix<f64>, Vec<usize>) {
            let chosen: Vec<&LabelRecord> = sorted.iter().filter(|l| l.split == split).collect();
            let mat = DMatrix::from_fn(data.nrows(), chosen.len(), |i, j| {
                data[(i, chosen[j].column_index)]
            });
            (mat, chosen.iter().map(|l| l.class_id).collect())
        };
        let (train, train_labels) = pick(Split::Train);
        let (test, test_labels) = pick(Split::Test);
        Ok(Self {
            train,
            train_labels,
            test,
            test_labels,
        })
    }

    pub fn dictionary(&self) -> Result<LabeledDictionary> {
        LabeledDictionary::new(
            DesignMatrix::new(self.train.clone())?,
            self.train_labels.clone(),
        )
    }
}

/// Parameters of the union-of-subspaces benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceSpec {
    pub classes: usize,
    pub dim: usize,
    pub subspace_dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Noise standard deviation relative to the sample norm.
    pub noise: f64,
    /// Fraction of training columns replaced by near-copies of another
    /// training column of the same class.
    pub duplicate_frac: f64,
    /// Relative size of the perturbation applied to each near-copy.
    pub duplicate_perturbation: f64,
}

impl Default for SubspaceSpec {
    fn default() -> Self {
        Self {
            classes: 5,
            dim: 200,
            subspace_dim: 4,
            train_per_class: 40,
            test_per_class: 20,
            noise: 0.01,
            duplicate_frac: 0.3,
            duplicate_perturbation: 1e-6,
        }
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Each class is a random `subspace_dim`-dimensional subspace of
/// `R^dim`; samples are Gaussian combinations of its basis plus isotropic
/// noise of relative size `noise`.
pub fn synthetic_subspaces(spec: &SubspaceSpec, seed: u64) -> Result<Dataset> {
    if spec.classes < 2 || spec.subspace_dim == 0 || spec.subspace_dim > spec.dim {
        return Err(invalid("need >= 2 classes and 1 <= subspace_dim <= dim"));
    }
    if spec.train_per_class < 2 || spec.test_per_class == 0 {
        return Err(invalid(
            "need >= 2 training and >= 1 test samples per class",
        ));
    }
    if !(0.0..1.0).contains(&spec.duplicate_frac) {
        return Err(invalid("duplicate_frac must lie in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_class = spec.train_per_class + spec.test_per_class;
    let mut train_cols: Vec<Vec<f64>> = Vec::new();
    let mut train_labels = Vec::new();
    let mut test_cols: Vec<Vec<f64>> = Vec::new();
    let mut test_labels = Vec::new();
    for c in 0..spec.classes {
        let raw = DMatrix::from_vec(
            spec.dim,
            spec.subspace_dim,
            gaussian_vec(&mut rng, spec.dim * spec.subspace_dim),
        );
        let basis = raw.qr().q();
        for s in 0..per_class {
            let coef = DMatrix::from_vec(
                spec.subspace_dim,
                1,
                gaussian_vec(&mut rng, spec.subspace_dim),
            );
            let mut v = (&basis * coef).as_slice().to_vec();
            let scale = spec.noise * norm2(&v) / (spec.dim as f64).sqrt();
            for (vi, e) in v.iter_mut().zip(gaussian_vec(&mut rng, spec.dim)) {
                *vi += scale * e;
            }
            if s < spec.train_per_class {
                train_cols.push(v);
                train_labels.push(c);
            } else {
                test_cols.push(v);
                test_labels.push(c);
            }
        }
    }
    let replace = (spec.duplicate_frac * spec.train_per_class as f64).round() as usize;
    let replace = replace.min(spec.train_per_class - 1);
    for c in 0..spec.classes {
        let start = c * spec.train_per_class;
        for t in 0..replace {
            let target = start + spec.train_per_class - 1 - t;
            let source = start + rng.random_range(0..spec.train_per_class - replace);
            let norm = norm2(&train_cols[source]);
            let noise = gaussian_vec(&mut rng, spec.dim);
            let eps = spec.duplicate_perturbation * norm / (spec.dim as f64).sqrt();
            train_cols[target] = train_cols[source]
                .iter()
                .zip(noise)
                .map(|(v, e)| v + eps * e)
                .collect();
        }
    }
    let to_mat = |cols: &[Vec<f64>]| DMatrix::from_fn(spec.dim, cols.len(), |i, j| cols[j][i]);
    Ok(Dataset {
        train: to_mat(&train_cols),
        train_labels,
        test: to_mat(&test_cols),
        test_labels,
    })
}
