//! Dense vector kernels and small factorizations used by the solvers.

use nalgebra::{DMatrix, DVector};

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = 4 * c;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn norm2_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    norm2_sq(a).sqrt()
}

#[inline]
pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

#[inline]
pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

/// Cholesky factor of a Gram matrix that grows one row/column at a time.
///
/// Stores the lower-triangular factor row-packed. Used by OMP and batch OMP
/// where the support only ever gains atoms.
#[derive(Debug, Clone, Default)]
pub struct GrowingCholesky {
    rows: Vec<Vec<f64>>,
}

impl GrowingCholesky {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Appends an atom given its inner products with the current atoms
    /// (`cross`) and its squared norm. Returns `false` and leaves the factor
    /// untouched when the new column is numerically dependent.
    pub fn push(&mut self, cross: &[f64], diag: f64) -> bool {
        debug_assert_eq!(cross.len(), self.rows.len());
        let w = self.forward(cross);
        let d = diag - norm2_sq(&w);
        if !(d > 1e-12 * diag.max(f64::MIN_POSITIVE)) {
            return false;
        }
        let mut row = w;
        row.push(d.sqrt());
        self.rows.push(row);
        true
    }

    /// Solves `L w = rhs`.
    pub fn forward(&self, rhs: &[f64]) -> Vec<f64> {
        let mut w = Vec::with_capacity(rhs.len());
        for (i, row) in self.rows.iter().enumerate() {
            let s = rhs[i] - dot(&row[..i], &w[..i]);
            w.push(s / row[i]);
        }
        w
    }

    /// Solves `L Lᵀ x = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = self.forward(rhs);
        let k = self.rows.len();
        for i in (0..k).rev() {
            let mut s = x[i];
            for j in i + 1..k {
                s -= self.rows[j][i] * x[j];
            }
            x[i] = s / self.rows[i][i];
        }
        x
    }
}

/// Minimum-norm least-squares solve through the SVD. The second value is
/// `true` when the system was rank deficient under the usual
/// `max(rows, cols) * eps * sigma_max` cutoff.
pub fn lstsq_svd(a: &DMatrix<f64>, b: &[f64]) -> (Vec<f64>, bool) {
    let (rows, cols) = a.shape();
    if cols == 0 {
        return (Vec::new(), false);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = rows.max(cols) as f64 * f64::EPSILON * smax;
    let rank = svd.singular_values.iter().filter(|s| **s > cutoff).count();
    let rhs = DVector::from_column_slice(b);
    let x = svd
        .solve(&rhs, cutoff)
        .unwrap_or_else(|_| DVector::zeros(cols));
    (x.iter().copied().collect(), rank < rows.min(cols))
}

/// Least squares through a Householder QR for tall full-rank systems,
/// falling back to [`lstsq_svd`] when `R` looks rank deficient.
pub fn lstsq(a: &DMatrix<f64>, b: &[f64]) -> (Vec<f64>, bool) {
    let (rows, cols) = a.shape();
    if cols == 0 || cols > rows {
        return lstsq_svd(a, b);
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let diag = r.diagonal().map(f64::abs);
    let cutoff = rows as f64 * f64::EPSILON * diag.max();
    if diag.min() <= cutoff {
        return lstsq_svd(a, b);
    }
    let mut rhs = DVector::from_column_slice(b);
    qr.q_tr_mul(&mut rhs);
    let mut top = rhs.rows(0, cols).into_owned();
    if !r.solve_upper_triangular_mut(&mut top) {
        return lstsq_svd(a, b);
    }
    (top.iter().copied().collect(), false)
}
