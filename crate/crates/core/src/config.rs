use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Knobs for the GMP / SGMP / BGMP family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmpConfig {
    /// Atoms added per outer iteration.
    pub rho: usize,
    /// Subspace exploration factor; 1 means plain GMP.
    pub omega: usize,
    /// ℓ1 weight.
    pub lambda: f64,
    /// Relative-improvement tolerance for the `2δ/‖b‖² ≤ ε` stop rule.
    pub epsilon: f64,
    pub max_outer: usize,
    /// Inner PG/CGD iteration cap per master solve.
    pub max_inner: usize,
    /// Cap on the support size; `None` resolves to `min(n, 600)`.
    pub max_atoms: Option<usize>,
    /// Absolute ∞-norm tolerance on the (generalized) gradient.
    pub inner_tol: f64,
}

impl Default for GmpConfig {
    fn default() -> Self {
        Self {
            rho: 1,
            omega: 1,
            lambda: 0.0,
            epsilon: 1e-5,
            max_outer: 1000,
            max_inner: 50,
            max_atoms: None,
            inner_tol: 1e-6,
        }
    }
}

impl GmpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rho == 0 || self.max_outer == 0 || self.max_inner == 0 {
            return Err(invalid("rho, max_outer and max_inner must be positive"));
        }
        if self.omega == 0 {
            return Err(invalid("omega must be at least 1"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(invalid(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon must be positive"));
        }
        if !(self.inner_tol > 0.0) {
            return Err(invalid("inner_tol must be positive"));
        }
        if self.max_atoms == Some(0) {
            return Err(invalid("max_atoms must be positive"));
        }
        Ok(())
    }

    /// Support cap for a problem with `n` measurements.
    pub fn atom_cap(&self, n: usize) -> usize {
        self.max_atoms.unwrap_or_else(|| n.min(600)).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = GmpConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.atom_cap(1024), 600);
        assert_eq!(cfg.atom_cap(64), 64);
    }

    #[test]
    fn rejects_bad_values() {
        for cfg in [
            GmpConfig {
                rho: 0,
                ..Default::default()
            },
            GmpConfig {
                omega: 0,
                ..Default::default()
            },
            GmpConfig {
                lambda: -1.0,
                ..Default::default()
            },
            GmpConfig {
                epsilon: 0.0,
                ..Default::default()
            },
            GmpConfig {
                inner_tol: 0.0,
                ..Default::default()
            },
            GmpConfig {
                max_atoms: Some(0),
                ..Default::default()
            },
        ] {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }
}
