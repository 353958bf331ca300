use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::matrix::DesignMatrix;
use crate::solution::SparseSolution;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of integers (cell, trial, stream, ...)
/// into an independent 64-bit seed. Depends only on its inputs, never on
/// scheduling order.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |h, &p| splitmix64(h ^ splitmix64(p)))
}

/// `n × m` matrix of i.i.d. standard normal entries drawn from ChaCha8
/// seeded with `seed`, filled column by column.
pub fn gen_matrix(n: usize, m: usize, seed: u64) -> Result<DesignMatrix> {
    if n == 0 || m == 0 {
        return Err(invalid(format!(
            "matrix shape must be positive, got {n}x{m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..n * m).map(|_| rng.sample(StandardNormal)).collect();
    DesignMatrix::from_col_major(n, m, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    /// Nonzeros are ±1.
    ZeroOne,
    /// Nonzeros are drawn from U(−1, 1).
    Uniform,
    /// Nonzeros are drawn from N(0, 1).
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalSpec {
    pub kind: SignalKind,
    pub k: usize,
    pub m: usize,
    pub seed: u64,
}

/// A `k`-sparse signal with uniformly random distinct support.
pub fn gen_signal(spec: SignalSpec) -> Result<SparseSolution> {
    if spec.k == 0 || spec.k > spec.m {
        return Err(invalid(format!(
            "need 1 <= k <= m, got k = {}, m = {}",
            spec.k, spec.m
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut support = sample(&mut rng, spec.m, spec.k).into_vec();
    support.sort_unstable();
    let values = (0..spec.k)
        .map(|_| match spec.kind {
            SignalKind::ZeroOne => {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            }
            SignalKind::Uniform => loop {
                let v: f64 = rng.random_range(-1.0..1.0);
                if v != 0.0 && v.abs() < 1.0 {
                    break v;
                }
            },
            SignalKind::Gaussian => loop {
                let v: f64 = rng.sample(StandardNormal);
                if v != 0.0 {
                    break v;
                }
            },
        })
        .collect();
    SparseSolution::new(spec.m, support, values)
}

/// Measurement noise model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    #[default]
    None,
    /// Entries uniform on `[−amplitude, amplitude]`.
    Uniform { amplitude: f64 },
    /// Entries `N(0, sigma²)`.
    Gaussian { sigma: f64 },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::None => Ok(()),
            NoiseSpec::Uniform { amplitude: s } | NoiseSpec::Gaussian { sigma: s } => {
                if s >= 0.0 && s.is_finite() {
                    Ok(())
                } else {
                    Err(invalid(format!(
                        "noise scale must be finite and >= 0, got {s}"
                    )))
                }
            }
        }
    }
}

pub fn add_noise(b: &mut [f64], noise: NoiseSpec, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match noise {
        NoiseSpec::None => {}
        NoiseSpec::Uniform { amplitude } => {
            if amplitude > 0.0 {
                for v in b.iter_mut() {
                    *v += rng.random_range(-amplitude..=amplitude);
                }
            }
        }
        NoiseSpec::Gaussian { sigma } => {
            for v in b.iter_mut() {
                *v += sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
}

/// Gaussian matrix whose columns `dup..2·dup` copy columns `0..dup`, with
/// ground truth equal to one on the first block and `b = A x` exactly.
pub fn gen_nonrip(
    n: usize,
    m: usize,
    dup: usize,
    seed: u64,
) -> Result<(DesignMatrix, SparseSolution, Vec<f64>)> {
    if dup == 0 || 2 * dup > m {
        return Err(invalid(format!(
            "need 1 <= dup and 2·dup <= m, got dup = {dup}, m = {m}"
        )));
    }
    let base = gen_matrix(n, m, seed)?;
    let mut data = base.into_dmatrix();
    for j in 0..dup {
        let col = data.column(j).clone_owned();
        data.column_mut(dup + j).copy_from(&col);
    }
    let a = DesignMatrix::new(data)?;
    let x = SparseSolution::new(m, (0..dup).collect(), vec![1.0; dup])?;
    let b = crate::matrix::matvec(&a, &x)?;
    Ok((a, x, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_is_deterministic() {
        assert_eq!(gen_matrix(4, 5, 9).unwrap(), gen_matrix(4, 5, 9).unwrap());
        assert_ne!(gen_matrix(4, 5, 9).unwrap(), gen_matrix(4, 5, 10).unwrap());
        assert!(gen_matrix(1, 1, 0).unwrap().as_slice()[0].is_finite());
        assert!(gen_matrix(0, 1, 0).is_err());
    }

    #[test]
    fn signal_kinds() {
        let x = gen_signal(SignalSpec {
            kind: SignalKind::ZeroOne,
            k: 7,
            m: 7,
            seed: 1,
        })
        .unwrap();
        assert!(x.values().iter().all(|v| v.abs() == 1.0));
        for kind in [
            SignalKind::ZeroOne,
            SignalKind::Uniform,
            SignalKind::Gaussian,
        ] {
            for seed in 0..20 {
                let x = gen_signal(SignalSpec {
                    kind,
                    k: 5,
                    m: 30,
                    seed,
                })
                .unwrap();
                assert_eq!(x.nnz(), 5);
                assert!(x.values().iter().all(|&v| v != 0.0));
                if kind == SignalKind::Uniform {
                    assert!(x.values().iter().all(|v| v.abs() < 1.0));
                }
            }
        }
        assert!(gen_signal(SignalSpec {
            kind: SignalKind::Gaussian,
            k: 0,
            m: 3,
            seed: 0
        })
        .is_err());
        assert!(gen_signal(SignalSpec {
            kind: SignalKind::Gaussian,
            k: 4,
            m: 3,
            seed: 0
        })
        .is_err());
    }

    #[test]
    fn uniform_noise_bounded() {
        let mut b = vec![0.0; 500];
        add_noise(&mut b, NoiseSpec::Uniform { amplitude: 0.01 }, 3);
        assert!(b.iter().all(|v| v.abs() <= 0.01));
        assert!(b.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn nonrip_duplicates_columns() {
        let (a, x, b) = gen_nonrip(128, 512, 16, 4).unwrap();
        for j in 0..16 {
            assert_eq!(a.column(j), a.column(16 + j));
        }
        assert_eq!(x.nnz(), 16);
        assert_eq!(b, crate::matrix::matvec(&a, &x).unwrap());
        assert!(gen_nonrip(8, 10, 6, 0).is_err());
    }

    #[test]
    fn derived_seeds_differ_by_path() {
        let s = derive_seed(7, &[1, 2]);
        assert_eq!(s, derive_seed(7, &[1, 2]));
        assert_ne!(s, derive_seed(7, &[2, 1]));
        assert_ne!(s, derive_seed(8, &[1, 2]));
    }
}
