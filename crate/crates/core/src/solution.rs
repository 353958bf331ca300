use std::collections::HashSet;

use crate::error::{check_len, invalid, Result, SparseError};
use crate::linalg::{norm1, norm2};

/// Coefficients whose magnitude falls below this are dropped by
/// [`SparseSolution::finalize`].
pub const PRUNE_THRESHOLD: f64 = 1e-12;

/// A sparse coefficient vector: distinct support indices with aligned values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSolution {
    support: Vec<usize>,
    values: Vec<f64>,
    m: usize,
}

impl SparseSolution {
    pub fn new(m: usize, support: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        check_len("solution values", support.len(), values.len())?;
        let mut seen = HashSet::with_capacity(support.len());
        for &j in &support {
            if j >= m {
                return Err(SparseError::IndexOutOfRange { index: j, m });
            }
            if !seen.insert(j) {
                return Err(invalid(format!("duplicate support index {j}")));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SparseError::NonFinite("solution values"));
        }
        Ok(Self { support, values, m })
    }

    pub fn zeros(m: usize) -> Self {
        Self {
            support: Vec::new(),
            values: Vec::new(),
            m,
        }
    }

    /// Sparsifies a dense vector, keeping every exactly-nonzero entry in
    /// ascending index order.
    pub fn from_dense(x: &[f64]) -> Self {
        let (support, values) = x
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, v)| (j, *v))
            .unzip();
        Self {
            support,
            values,
            m: x.len(),
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.m];
        for (&j, &v) in self.support.iter().zip(&self.values) {
            x[j] = v;
        }
        x
    }

    /// Drops near-zero coefficients and sorts the support ascending.
    pub fn finalize(mut self) -> Self {
        let mut pairs: Vec<(usize, f64)> = self
            .support
            .iter()
            .copied()
            .zip(self.values.iter().copied())
            .filter(|(_, v)| v.abs() >= PRUNE_THRESHOLD)
            .collect();
        pairs.sort_unstable_by_key(|p| p.0);
        (self.support, self.values) = pairs.into_iter().unzip();
        self
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of stored coefficients.
    pub fn nnz(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn get(&self, j: usize) -> f64 {
        self.support
            .iter()
            .position(|&s| s == j)
            .map_or(0.0, |p| self.values[p])
    }

    pub fn l1_norm(&self) -> f64 {
        norm1(&self.values)
    }

    /// Replaces the values, keeping the support.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.m, self.support.clone(), values)
    }
}

/// The measurement residual `b − A x`; also the dual variable of the
/// restricted master problem at optimality.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual(Vec<f64>);

impl Residual {
    pub fn new(v: Vec<f64>) -> Self {
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn new_rejects_duplicates_and_range() {
        assert!(SparseSolution::new(4, vec![1, 1], vec![1.0, 2.0]).is_err());
        assert!(SparseSolution::new(4, vec![4], vec![1.0]).is_err());
        assert!(SparseSolution::new(4, vec![0], vec![]).is_err());
    }

    #[test]
    fn finalize_prunes_and_sorts() {
        let x = SparseSolution::new(6, vec![5, 0, 3], vec![1.0, 1e-14, -2.0])
            .unwrap()
            .finalize();
        assert_eq!(x.support(), &[3, 5]);
        assert_eq!(x.values(), &[-2.0, 1.0]);
        assert_eq!(x.get(0), 0.0);
    }

    proptest! {
        #[test]
        fn dense_round_trip(entries in proptest::collection::vec(
            prop_oneof![Just(0.0), -10.0f64..10.0], 1..40)) {
            let x = SparseSolution::from_dense(&entries).finalize();
            let again = SparseSolution::from_dense(&x.to_dense());
            prop_assert_eq!(x.support(), again.support());
            prop_assert_eq!(x.values(), again.values());
            for (j, v) in entries.iter().enumerate() {
                if !x.support().contains(&j) {
                    prop_assert!(v.abs() < PRUNE_THRESHOLD);
                }
            }
        }
    }
}
