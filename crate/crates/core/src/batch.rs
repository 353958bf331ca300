//! Batch-mode decoding against a precomputed Gram matrix.
//!
//! With `Q = AᵀA` and `Aᵀb` cached, the correlation step of the outer loop
//! becomes `Aᵀa = [Aᵀb] − Q_I x_I`, which costs `O(m·|I|)` instead of
//! `O(m·n)`. The master problems are solved on `Q_{I,I}` directly.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;

use crate::baselines::GreedyResult;
use crate::config::GmpConfig;
use crate::error::{check_len, invalid, Result, SparseError};
use crate::gmp::{run_outer, CorrelationSource, StopRule};
use crate::inner::{cgd_minimize, InnerOptions, RestrictedProblem};
use crate::linalg::{axpy, dot, norm2_sq, GrowingCholesky};
use crate::matrix::DesignMatrix;
use crate::par::{map_indexed, Execution};
use crate::solution::SparseSolution;
use crate::trace::SolveTrace;

/// Largest atom count for which a Gram matrix is built by default.
pub const DEFAULT_GRAM_CAP: usize = 32768;

/// Relative magnitude below which a batch-OMP correlation counts as zero.
const ZERO_CORRELATION: f64 = 1e-12;

fn fingerprint(a: &DesignMatrix) -> u64 {
    // FNV-1a over the column norm bit patterns and the shape
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |v: u64| {
        for byte in v.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    eat(a.n() as u64);
    eat(a.m() as u64);
    for c in a.col_norms() {
        eat(c.to_bits());
    }
    h
}

/// `Q = AᵀA` for one dictionary. Immutable and shareable across decodes.
#[derive(Debug, Clone)]
pub struct GramCache {
    q: DMatrix<f64>,
    n: usize,
    fingerprint: u64,
    build_flops: u64,
}

/// Per-signal data needed by batch decoding: `Aᵀb` and `‖b‖²`.
#[derive(Debug, Clone)]
pub struct BatchSignal {
    pub atb: Vec<f64>,
    pub b_norm_sq: f64,
    fingerprint: u64,
}

impl BatchSignal {
    /// Computes `Aᵀb` and `‖b‖²`.
    pub fn new(a: &DesignMatrix, b: &[f64]) -> Result<Self> {
        check_len("measurement vector", a.n(), b.len())?;
        let mut atb = vec![0.0; a.m()];
        a.correlate_into(b, &mut atb, Execution::Sequential);
        Ok(Self {
            atb,
            b_norm_sq: norm2_sq(b),
            fingerprint: fingerprint(a),
        })
    }

    /// Flops spent computing `Aᵀb`.
    pub fn prepare_flops(a: &DesignMatrix) -> u64 {
        2 * a.n() as u64 * a.m() as u64
    }
}

const GRAM_BLOCK: usize = 256;

/// `AᵀA` from GEMM products over the upper-triangular column blocks,
/// mirrored so the result is exactly symmetric.
fn gram_blocked(mat: &DMatrix<f64>, exec: Execution) -> DMatrix<f64> {
    let m = mat.ncols();
    let at = mat.transpose();
    let starts: Vec<usize> = (0..m).step_by(GRAM_BLOCK).collect();
    let pairs: Vec<(usize, usize)> = (0..starts.len())
        .flat_map(|i| (i..starts.len()).map(move |j| (i, j)))
        .collect();
    let width = |s: usize| GRAM_BLOCK.min(m - s);
    let blocks = map_indexed(pairs.len(), exec, |p| {
        let (bi, bj) = (starts[pairs[p].0], starts[pairs[p].1]);
        at.rows(bi, width(bi)) * mat.columns(bj, width(bj))
    });
    let mut q = DMatrix::zeros(m, m);
    for (&(i, j), block) in pairs.iter().zip(&blocks) {
        let (bi, bj) = (starts[i], starts[j]);
        q.view_mut((bi, bj), block.shape()).copy_from(block);
        if i != j {
            q.view_mut((bj, bi), (block.ncols(), block.nrows()))
                .copy_from(&block.transpose());
        }
    }
    for d in (0..m).step_by(GRAM_BLOCK) {
        let w = width(d);
        for c in d..d + w {
            for r in d..c {
                q[(c, r)] = q[(r, c)];
            }
        }
    }
    q
}

/// Builds the Gram cache, refusing dictionaries with more than
/// [`DEFAULT_GRAM_CAP`] atoms.
pub fn build_gram(a: &DesignMatrix) -> Result<GramCache> {
    build_gram_capped(a, DEFAULT_GRAM_CAP)
}

pub fn build_gram_capped(a: &DesignMatrix, max_atoms: usize) -> Result<GramCache> {
    let m = a.m();
    if m > max_atoms {
        let bytes = (m as u128) * (m as u128) * 8;
        return Err(SparseError::CapExceeded {
            what: "Gram matrix construction",
            detail: format!(
                "m = {m} exceeds the cap of {max_atoms}; storing Q = AᵀA needs O(m²) = {bytes} bytes"
            ),
        });
    }
    let q = gram_blocked(a.as_dmatrix(), Execution::Parallel);
    Ok(GramCache {
        q,
        n: a.n(),
        fingerprint: fingerprint(a),
        build_flops: 2 * (m as u64) * (m as u64) * a.n() as u64,
    })
}

impl GramCache {
    pub fn m(&self) -> usize {
        self.q.ncols()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn column(&self, j: usize) -> &[f64] {
        let m = self.m();
        &self.q.as_slice()[j * m..(j + 1) * m]
    }

    pub fn build_flops(&self) -> u64 {
        self.build_flops
    }

    fn check_signal(&self, signal: &BatchSignal) -> Result<()> {
        check_len("Aᵀb", self.m(), signal.atb.len())?;
        if signal.fingerprint != self.fingerprint {
            return Err(invalid(
                "inconsistent cache: signal was prepared against a different dictionary",
            ));
        }
        Ok(())
    }
}

/// `φ(u) = ½(‖b‖² − 2[Aᵀb]_Iᵀu + uᵀQ_{I,I}u)` with `Q_{I,I}` gathered once.
pub struct GramRestricted {
    qii: Vec<f64>,
    atb_i: Vec<f64>,
    b_norm_sq: f64,
    max_diag: f64,
}

impl GramRestricted {
    pub fn new(cache: &GramCache, atb: &[f64], b_norm_sq: f64, idx: &[usize]) -> Self {
        let d = idx.len();
        let mut qii = vec![0.0; d * d];
        for (c, &j) in idx.iter().enumerate() {
            let col = cache.column(j);
            for (r, &i) in idx.iter().enumerate() {
                qii[c * d + r] = col[i];
            }
        }
        let max_diag = (0..d).map(|i| qii[i * d + i]).fold(0.0, f64::max);
        Self {
            qii,
            atb_i: idx.iter().map(|&j| atb[j]).collect(),
            b_norm_sq,
            max_diag,
        }
    }

    fn apply(&self, u: &[f64], out: &mut [f64]) {
        let d = self.atb_i.len();
        out.iter_mut().for_each(|o| *o = 0.0);
        for (c, &uc) in u.iter().enumerate() {
            if uc != 0.0 {
                axpy(uc, &self.qii[c * d..(c + 1) * d], out);
            }
        }
    }
}

impl RestrictedProblem for GramRestricted {
    fn dim(&self) -> usize {
        self.atb_i.len()
    }

    fn value_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        self.apply(u, grad);
        let quad = dot(u, grad);
        for (g, a) in grad.iter_mut().zip(&self.atb_i) {
            *g -= a;
        }
        0.5 * (self.b_norm_sq - 2.0 * dot(&self.atb_i, u) + quad)
    }

    fn hess_vec(&self, p: &[f64], out: &mut [f64]) -> f64 {
        self.apply(p, out);
        dot(p, out)
    }

    fn max_col_norm_sq(&self) -> f64 {
        self.max_diag
    }

    fn value_scale(&self, phi: f64) -> f64 {
        self.b_norm_sq.max(phi.abs())
    }
}

/// Correlation source backed by the Gram cache.
pub struct GramSource<'a> {
    cache: &'a GramCache,
    signal: &'a BatchSignal,
}

impl<'a> GramSource<'a> {
    pub fn new(cache: &'a GramCache, signal: &'a BatchSignal) -> Result<Self> {
        cache.check_signal(signal)?;
        Ok(Self { cache, signal })
    }
}

impl CorrelationSource for GramSource<'_> {
    type Problem<'p>
        = GramRestricted
    where
        Self: 'p;

    fn n_atoms(&self) -> usize {
        self.cache.m()
    }

    fn n_measurements(&self) -> usize {
        self.cache.n()
    }

    fn theta0(&self) -> f64 {
        0.5 * self.signal.b_norm_sq
    }

    fn correlate(&self, idx: &[usize], x: &[f64], out: &mut [f64]) -> u64 {
        out.copy_from_slice(&self.signal.atb);
        for (&j, &v) in idx.iter().zip(x) {
            if v != 0.0 {
                axpy(-v, self.cache.column(j), out);
            }
        }
        2 * self.cache.m() as u64 * idx.len() as u64
    }

    fn restricted<'p>(&'p self, idx: &'p [usize]) -> GramRestricted {
        GramRestricted::new(self.cache, &self.signal.atb, self.signal.b_norm_sq, idx)
    }
}

/// Batch-mode GMP (SGMP when `cfg.omega > 1`). The trace objective is
/// `λ‖x‖₁ + ½(‖b‖² − 2[Aᵀb]ᵀx + x_IᵀQ_{I,I}x_I)`.
pub fn bgmp_solve(
    cache: &GramCache,
    signal: &BatchSignal,
    cfg: &GmpConfig,
    stops: &[StopRule],
) -> Result<(SparseSolution, SolveTrace)> {
    let src = GramSource::new(cache, signal)?;
    run_outer(&src, cfg, stops, true)
}

/// Batch OMP: one atom per step chosen from `[Aᵀb] − Q_I x_I`, least-squares
/// coefficients from an incrementally grown Cholesky factor of `Q_{I,I}`.
/// Stops after `k` atoms or when every correlation vanishes.
pub fn bomp_solve(cache: &GramCache, signal: &BatchSignal, k: usize) -> Result<GreedyResult> {
    cache.check_signal(signal)?;
    if k == 0 {
        return Err(invalid("bomp_solve needs k >= 1"));
    }
    let m = cache.m();
    let k = k.min(m);
    let atb = &signal.atb;
    let scale = atb.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let mut trace = SolveTrace::new(0.5 * signal.b_norm_sq);
    if scale == 0.0 {
        return Ok(GreedyResult::empty(m, trace));
    }
    let mut alpha = atb.clone();
    let mut chosen = vec![false; m];
    let mut idx: Vec<usize> = Vec::with_capacity(k);
    let mut x: Vec<f64> = Vec::new();
    let mut chol = GrowingCholesky::new();
    let mut degenerate = false;

    while idx.len() < k {
        let started = Instant::now();
        let best = (0..m)
            .filter(|&j| !chosen[j])
            .max_by(|&p, &q| alpha[p].abs().total_cmp(&alpha[q].abs()).then(q.cmp(&p)));
        let Some(j) = best else { break };
        if alpha[j].abs() <= ZERO_CORRELATION * scale {
            break;
        }
        chosen[j] = true;
        let qj = cache.column(j);
        if !degenerate {
            let cross: Vec<f64> = idx.iter().map(|&i| qj[i]).collect();
            degenerate = !chol.push(&cross, qj[j]);
        }
        idx.push(j);
        let rhs: Vec<f64> = idx.iter().map(|&i| atb[i]).collect();
        x = if degenerate {
            let mut warm = x.clone();
            warm.push(0.0);
            let problem = GramRestricted::new(cache, atb, signal.b_norm_sq, &idx);
            let opts = InnerOptions {
                max_iter: 20 * idx.len() + 100,
                tol: 1e-10,
                lipschitz: None,
            };
            cgd_minimize(&problem, &warm, opts)?.u
        } else {
            chol.solve(&rhs)
        };
        alpha.copy_from_slice(atb);
        for (&i, &v) in idx.iter().zip(&x) {
            axpy(-v, cache.column(i), &mut alpha);
        }
        trace.correlation_flops += 2 * m as u64 * idx.len() as u64;
        let phi = 0.5 * (signal.b_norm_sq - dot(&rhs, &x)).max(0.0);
        let wall = started.elapsed().as_secs_f64() * 1e3;
        trace.record(phi, idx.len(), 1, wall, vec![j], None);
    }
    trace.degenerate = degenerate;
    let solution = SparseSolution::new(m, idx, x)?.finalize();
    Ok(GreedyResult {
        solution,
        trace,
        degenerate,
    })
}

/// Which batch decoder to run.
#[derive(Debug, Clone)]
pub enum BatchDecoder {
    Bgmp {
        cfg: GmpConfig,
        stops: Vec<StopRule>,
    },
    Bomp {
        k: usize,
    },
}

/// One decoded signal.
#[derive(Debug, Clone)]
pub struct BatchRecord {
    pub signal_id: usize,
    pub solution: SparseSolution,
    pub residual_norm: f64,
    pub wall_ms: f64,
    /// Correlation flops, including the `Aᵀb` preparation.
    pub flops: u64,
    pub trace: SolveTrace,
}

/// Decodes every column of `signals` against `a` using `cache`.
pub fn decode_batch(
    a: &DesignMatrix,
    cache: &GramCache,
    signals: &DMatrix<f64>,
    decoder: &BatchDecoder,
    exec: Execution,
) -> Result<Vec<BatchRecord>> {
    check_len("signal length", a.n(), signals.nrows())?;
    let fp = fingerprint(a);
    // one GEMM for every Aᵀb in the batch
    let atb_all = a.as_dmatrix().transpose() * signals;
    let results = map_indexed(signals.ncols(), exec, |s| -> Result<BatchRecord> {
        let started = Instant::now();
        let b = signals.column(s);
        let b = b.as_slice();
        let signal = BatchSignal {
            atb: atb_all.column(s).as_slice().to_vec(),
            b_norm_sq: norm2_sq(b),
            fingerprint: fp,
        };
        let (solution, trace) = match decoder {
            BatchDecoder::Bgmp { cfg, stops } => bgmp_solve(cache, &signal, cfg, stops)?,
            BatchDecoder::Bomp { k } => {
                let r = bomp_solve(cache, &signal, *k)?;
                (r.solution, r.trace)
            }
        };
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        let residual_norm = crate::matrix::residual(a, b, &solution)?.norm();
        Ok(BatchRecord {
            signal_id: s,
            flops: trace.correlation_flops + BatchSignal::prepare_flops(a),
            solution,
            residual_norm,
            wall_ms,
            trace,
        })
    });
    results.into_iter().collect()
}

/// Writes `signal_id,support_size,residual_norm,wall_ms`.
pub fn write_batch_summary<W: Write>(records: &[BatchRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["signal_id", "support_size", "residual_norm", "wall_ms"])?;
    for r in records {
        out.write_record(&[
            r.signal_id.to_string(),
            r.solution.nnz().to_string(),
            format!("{:e}", r.residual_norm),
            format!("{:.4}", r.wall_ms),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `signal_id,atom_index,value` triples.
pub fn write_batch_solutions<W: Write>(records: &[BatchRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["signal_id", "atom_index", "value"])?;
    for r in records {
        for (&j, &v) in r.solution.support().iter().zip(r.solution.values()) {
            out.write_record(&[r.signal_id.to_string(), j.to_string(), format!("{v:e}")])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, m: usize, seed: u64) -> DesignMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DesignMatrix::from_col_major(
            n,
            m,
            (0..n * m).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_gram() {
        let cache = build_gram(&DesignMatrix::identity(3)).unwrap();
        assert_eq!(cache.q(), &DMatrix::<f64>::identity(3, 3));
    }

    #[test]
    fn duplicated_columns_correlate_fully() {
        let a = DesignMatrix::from_col_major(2, 3, vec![1.0, 2.0, 0.5, 0.0, 1.0, 2.0]).unwrap();
        let cache = build_gram(&a).unwrap();
        assert!((cache.q()[(0, 2)] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn gram_matches_naive_triple_loop() {
        let a = random_matrix(5, 7, 1);
        let cache = build_gram(&a).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                let mut naive = 0.0;
                for r in 0..5 {
                    naive += a.as_dmatrix()[(r, i)] * a.as_dmatrix()[(r, j)];
                }
                assert!((cache.q()[(i, j)] - naive).abs() < 1e-12);
            }
            assert!((cache.q()[(i, i)] - a.col_norm(i).powi(2)).abs() < 1e-10);
        }
    }

    #[test]
    fn cap_refusal_mentions_storage() {
        let a = random_matrix(2, 10, 2);
        let err = build_gram_capped(&a, 5).unwrap_err().to_string();
        assert!(err.contains("O(m²)"), "{err}");
    }

    #[test]
    fn bomp_identity_and_errors() {
        let a = DesignMatrix::identity(4);
        let cache = build_gram(&a).unwrap();
        let sig = BatchSignal::new(&a, &[2.0, 0.0, 0.0, 0.0]).unwrap();
        let r = bomp_solve(&cache, &sig, 1).unwrap();
        assert_eq!(r.solution.support(), &[0]);
        assert_eq!(r.solution.values(), &[2.0]);
        assert!(bomp_solve(&cache, &sig, 0).is_err());

        let other = random_matrix(4, 4, 9);
        let foreign = BatchSignal::new(&other, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(bomp_solve(&cache, &foreign, 1).is_err());
    }

    #[test]
    fn bgmp_zero_signal() {
        let a = random_matrix(4, 6, 3);
        let cache = build_gram(&a).unwrap();
        let sig = BatchSignal::new(&a, &[0.0; 4]).unwrap();
        let (x, trace) = bgmp_solve(&cache, &sig, &GmpConfig::default(), &[]).unwrap();
        assert!(x.is_empty());
        assert_eq!(trace.outer_iterations(), 0);
    }

    #[test]
    fn batch_csv_outputs() {
        let a = DesignMatrix::identity(3);
        let cache = build_gram(&a).unwrap();
        let signals = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, -2.0, 0.0]);
        let recs = decode_batch(
            &a,
            &cache,
            &signals,
            &BatchDecoder::Bomp { k: 1 },
            Execution::Sequential,
        )
        .unwrap();
        let mut s = Vec::new();
        write_batch_solutions(&recs, &mut s).unwrap();
        assert_eq!(
            String::from_utf8(s).unwrap(),
            "signal_id,atom_index,value\n0,0,1e0\n1,1,-2e0\n"
        );
        let mut s = Vec::new();
        write_batch_summary(&recs, &mut s).unwrap();
        assert!(String::from_utf8(s)
            .unwrap()
            .starts_with("signal_id,support_size,residual_norm,wall_ms\n0,1,0e0,"));
    }
}
