//! The dictionary type and the three primitive products every solver uses.

use nalgebra::DMatrix;

use crate::error::{check_len, invalid, Result, SparseError};
use crate::linalg::{axpy, dot, norm1, norm2_sq};
use crate::par::{fill_indexed, Execution};
use crate::solution::{Residual, SparseSolution};

/// Above this many entries `correlate` splits the column loop over threads.
const PARALLEL_CORRELATE_ENTRIES: usize = 1 << 20;

/// Dense `n × m` dictionary stored column-major, with cached column norms.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    data: DMatrix<f64>,
    col_norms: Vec<f64>,
}

impl DesignMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        let (n, m) = data.shape();
        if n == 0 || m == 0 {
            return Err(invalid(format!(
                "design matrix must be non-empty, got {n}x{m}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SparseError::NonFinite("design matrix"));
        }
        let slice = data.as_slice();
        let col_norms = (0..m)
            .map(|j| norm2_sq(&slice[j * n..(j + 1) * n]).sqrt())
            .collect();
        Ok(Self { data, col_norms })
    }

    /// Builds from `n·m` values laid out column by column.
    pub fn from_col_major(n: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        check_len("column-major buffer", n * m, values.len())?;
        Self::new(DMatrix::from_vec(n, m, values))
    }

    /// Builds from row vectors (each row is one measurement).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        for r in rows {
            check_len("matrix row", m, r.len())?;
        }
        Self::new(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n)).expect("identity is valid")
    }

    /// Number of measurements (rows).
    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    /// Number of atoms (columns).
    pub fn m(&self) -> usize {
        self.data.ncols()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.n();
        &self.data.as_slice()[j * n..(j + 1) * n]
    }

    pub fn col_norm(&self, j: usize) -> f64 {
        self.col_norms[j]
    }

    pub fn col_norms(&self) -> &[f64] {
        &self.col_norms
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_dmatrix(self) -> DMatrix<f64> {
        self.data
    }

    /// Column-major backing storage.
    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice()
    }

    /// Copies the listed columns into a dense `n × |idx|` matrix.
    pub fn select_columns(&self, idx: &[usize]) -> DMatrix<f64> {
        let n = self.n();
        let mut out = DMatrix::zeros(n, idx.len());
        for (c, &j) in idx.iter().enumerate() {
            out.column_mut(c).copy_from_slice(self.column(j));
        }
        out
    }

    /// Returns a copy with unit-norm columns plus the original norms.
    /// Zero columns are left untouched.
    pub fn normalized(&self) -> (DesignMatrix, Vec<f64>) {
        let mut data = self.data.clone();
        for (j, &norm) in self.col_norms.iter().enumerate() {
            if norm > 0.0 {
                data.column_mut(j).scale_mut(1.0 / norm);
            }
        }
        let out = DesignMatrix::new(data).expect("scaling keeps entries finite");
        (out, self.col_norms.clone())
    }

    /// `A_I u` for an index list and aligned coefficients.
    pub fn combine(&self, idx: &[usize], coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for (&j, &c) in idx.iter().zip(coeffs) {
            if c != 0.0 {
                axpy(c, self.column(j), &mut out);
            }
        }
        out
    }

    /// `A x` for a dense length-`m` vector.
    pub fn apply_dense(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("dense coefficient vector", self.m(), x.len())?;
        let idx: Vec<usize> = (0..self.m()).collect();
        Ok(self.combine(&idx, x))
    }

    /// `Aᵀ r` written into `out`.
    pub fn correlate_into(&self, r: &[f64], out: &mut [f64], exec: Execution) {
        debug_assert_eq!(r.len(), self.n());
        debug_assert_eq!(out.len(), self.m());
        let exec = if self.n() * self.m() >= PARALLEL_CORRELATE_ENTRIES {
            exec
        } else {
            Execution::Sequential
        };
        fill_indexed(out, exec, |j| dot(self.column(j), r));
    }

    /// `A_Iᵀ r` for a subset of columns.
    pub fn correlate_subset(&self, idx: &[usize], r: &[f64]) -> Vec<f64> {
        idx.iter().map(|&j| dot(self.column(j), r)).collect()
    }
}

fn check_solution(a: &DesignMatrix, x: &SparseSolution) -> Result<()> {
    check_len("solution ambient dimension", a.m(), x.m())?;
    if let Some(&bad) = x.support().iter().find(|&&j| j >= a.m()) {
        return Err(SparseError::IndexOutOfRange {
            index: bad,
            m: a.m(),
        });
    }
    Ok(())
}

/// `A x` restricted to the support of `x`; costs `O(n·|support|)`.
pub fn matvec(a: &DesignMatrix, x: &SparseSolution) -> Result<Vec<f64>> {
    check_solution(a, x)?;
    Ok(a.combine(x.support(), x.values()))
}

/// `g = Aᵀ r`.
pub fn correlate(a: &DesignMatrix, r: &Residual) -> Result<Vec<f64>> {
    check_len("residual", a.n(), r.len())?;
    let mut g = vec![0.0; a.m()];
    a.correlate_into(r.as_slice(), &mut g, Execution::Parallel);
    Ok(g)
}

/// `b − A x`.
pub fn residual(a: &DesignMatrix, b: &[f64], x: &SparseSolution) -> Result<Residual> {
    check_len("measurement vector", a.n(), b.len())?;
    let ax = matvec(a, x)?;
    Ok(Residual::new(
        b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect(),
    ))
}

/// `λ‖x‖₁ + ½‖b − A x‖²`.
pub fn objective(a: &DesignMatrix, b: &[f64], x: &SparseSolution, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(invalid(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    let r = residual(a, b, x)?;
    Ok(lambda * norm1(x.values()) + 0.5 * norm2_sq(r.as_slice()))
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
    fn matvec_identity_and_empty() {
        let a = DesignMatrix::identity(3);
        let x = SparseSolution::new(3, vec![1], vec![2.0]).unwrap();
        assert_eq!(matvec(&a, &x).unwrap(), vec![0.0, 2.0, 0.0]);
        assert_eq!(matvec(&a, &SparseSolution::zeros(3)).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn matvec_matches_full_dense_product() {
        let a = random_matrix(5, 8, 7);
        let x = SparseSolution::new(8, vec![6, 1, 3], vec![0.5, -1.25, 2.0]).unwrap();
        let dense = DMatrix::from_column_slice(8, 1, &x.to_dense());
        let oracle = a.as_dmatrix() * dense;
        let got = matvec(&a, &x).unwrap();
        for i in 0..5 {
            assert!((got[i] - oracle[(i, 0)]).abs() < 1e-12);
        }
    }

    #[test]
    fn matvec_rejects_bad_index() {
        let a = DesignMatrix::identity(3);
        let x = SparseSolution::new(5, vec![4], vec![1.0]).unwrap();
        assert!(matches!(
            matvec(&a, &x),
            Err(SparseError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn correlate_identity_zero_and_naive() {
        let a = DesignMatrix::identity(3);
        let g = correlate(&a, &Residual::new(vec![1.0, -2.0, 0.0])).unwrap();
        assert_eq!(g, vec![1.0, -2.0, 0.0]);
        assert_eq!(
            correlate(&a, &Residual::new(vec![0.0; 3])).unwrap(),
            vec![0.0; 3]
        );

        let a = random_matrix(6, 10, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g = correlate(&a, &Residual::new(r.clone())).unwrap();
        for j in 0..10 {
            let mut naive = 0.0;
            for i in 0..6 {
                naive += a.as_dmatrix()[(i, j)] * r[i];
            }
            assert!((g[j] - naive).abs() <= 1e-12 * naive.abs().max(1.0));
        }
        assert!(correlate(&a, &Residual::new(vec![0.0; 5])).is_err());
    }

    #[test]
    fn objective_examples() {
        let a = DesignMatrix::identity(2);
        let x0 = SparseSolution::zeros(2);
        assert_eq!(objective(&a, &[3.0, 4.0], &x0, 0.7).unwrap(), 12.5);
        let e1 = SparseSolution::new(2, vec![0], vec![1.0]).unwrap();
        assert_eq!(objective(&a, &[1.0, 0.0], &e1, 0.0).unwrap(), 0.0);
        assert!(objective(&a, &[1.0, 0.0], &e1, -1.0).is_err());
    }

    #[test]
    fn objective_matches_dense_recomputation() {
        let a = random_matrix(4, 6, 5);
        let b = [0.3, -1.0, 2.0, 0.5];
        let x = SparseSolution::new(6, vec![0, 4], vec![1.5, -0.5]).unwrap();
        let xd = x.to_dense();
        let mut r = b.to_vec();
        for i in 0..4 {
            for j in 0..6 {
                r[i] -= a.as_dmatrix()[(i, j)] * xd[j];
            }
        }
        let oracle = 0.2 * xd.iter().map(|v| v.abs()).sum::<f64>()
            + 0.5 * r.iter().map(|v| v * v).sum::<f64>();
        assert!((objective(&a, &b, &x, 0.2).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn col_norms_cached() {
        let a = random_matrix(7, 9, 2);
        for j in 0..9 {
            let direct = a.as_dmatrix().column(j).norm();
            assert!((a.col_norm(j) - direct).abs() <= 1e-12 * direct);
        }
    }

    #[test]
    fn rejects_empty_and_nan() {
        assert!(DesignMatrix::new(DMatrix::zeros(0, 3)).is_err());
        assert!(DesignMatrix::from_col_major(1, 1, vec![f64::NAN]).is_err());
    }
}
