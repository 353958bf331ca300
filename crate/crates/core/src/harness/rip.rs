use itertools::Itertools;
use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{invalid, Result, SparseError};
use crate::matrix::DesignMatrix;

/// Largest number of supports enumerated unless the caller raises it.
pub const DEFAULT_RIP_CAP: u64 = 100_000;

/// Extreme restricted eigenvalues of `AᵀA` over all size-`k` supports, with
/// `A`'s columns scaled to unit norm first.
#[derive(Debug, Clone, PartialEq)]
pub struct RipEstimate {
    pub k: usize,
    pub delta: f64,
    pub gamma_minus: f64,
    pub gamma_plus: f64,
    /// `γ₊ / γ₋`; infinite when `γ₋ = 0`.
    pub kappa: f64,
    pub supports: u64,
    /// Column norms divided out before enumeration.
    pub column_norms: Vec<f64>,
}

fn binomial(m: usize, k: usize) -> Option<u64> {
    let k = k.min(m - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (m - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

/// Exhaustive restricted-eigenvalue scan. Refuses when `C(m, k)` exceeds
/// `cap`.
pub fn estimate_rip(a: &DesignMatrix, k: usize, cap: u64) -> Result<RipEstimate> {
    let m = a.m();
    if k == 0 || k > m {
        return Err(invalid(format!("need 1 <= k <= m, got k = {k}, m = {m}")));
    }
    if a.col_norms().iter().any(|&c| c == 0.0) {
        return Err(invalid("zero column cannot be normalized"));
    }
    let count = binomial(m, k);
    if count.is_none_or(|c| c > cap) {
        let shown = count.map_or_else(|| "more than 2^64".to_string(), |c| c.to_string());
        return Err(SparseError::CapExceeded {
            what: "RIP enumeration",
            detail: format!("C({m}, {k}) = {shown} supports exceeds the cap of {cap}"),
        });
    }
    let (unit, norms) = a.normalized();
    let gram = unit.as_dmatrix().tr_mul(unit.as_dmatrix());
    let mut gamma_minus = f64::INFINITY;
    let mut gamma_plus = f64::NEG_INFINITY;
    let mut sub = DMatrix::zeros(k, k);
    for support in (0..m).combinations(k) {
        for (r, &i) in support.iter().enumerate() {
            for (c, &j) in support.iter().enumerate() {
                sub[(r, c)] = gram[(i, j)];
            }
        }
        let eig = SymmetricEigen::new(sub.clone()).eigenvalues;
        gamma_minus = gamma_minus.min(eig.min());
        gamma_plus = gamma_plus.max(eig.max());
    }
    let gamma_minus = gamma_minus.max(0.0);
    Ok(RipEstimate {
        k,
        delta: (1.0 - gamma_minus).max(gamma_plus - 1.0),
        gamma_minus,
        gamma_plus,
        kappa: if gamma_minus > 0.0 {
            gamma_plus / gamma_minus
        } else {
            f64::INFINITY
        },
        supports: count.unwrap_or(0),
        column_norms: norms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormal_is_isometric() {
        let a = DesignMatrix::identity(5);
        for k in 1..=5 {
            let r = estimate_rip(&a, k, DEFAULT_RIP_CAP).unwrap();
            assert!(r.delta.abs() < 1e-12);
            assert!((r.kappa - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_columns_hit_the_boundary() {
        let a = DesignMatrix::from_col_major(2, 3, vec![3.0, 4.0, 3.0, 4.0, 0.0, 1.0]).unwrap();
        let r = estimate_rip(&a, 2, DEFAULT_RIP_CAP).unwrap();
        assert!(r.gamma_minus < 1e-12);
        assert!((r.delta - 1.0).abs() < 1e-12);
        assert!(r.kappa > 1e12);
        assert_eq!(r.column_norms, vec![5.0, 5.0, 1.0]);
    }

    #[test]
    fn cap_refusal_names_cost() {
        let a = DesignMatrix::identity(30);
        let err = estimate_rip(&a, 15, DEFAULT_RIP_CAP)
            .unwrap_err()
            .to_string();
        assert!(err.contains("C(30, 15) = 155117520"), "{err}");
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(12, 2), Some(66));
        assert_eq!(binomial(5, 5), Some(1));
        assert_eq!(binomial(200, 100), None);
    }
}
