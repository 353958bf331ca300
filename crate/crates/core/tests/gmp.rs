use gmp_core::gmp::{default_stops, sgmp_select, worst_case_select, ActiveSet};
use gmp_core::harness::{derive_seed, gen_matrix, gen_nonrip, gen_signal, SignalKind, SignalSpec};
use gmp_core::linalg::lstsq_svd;
use gmp_core::*;
use itertools::Itertools;
use proptest::prelude::*;

fn problem(n: usize, m: usize, k: usize, kind: SignalKind, seed: u64) -> (DesignMatrix, SparseSolution, Vec<f64>) {
    let a = gen_matrix(n, m, derive_seed(seed, &[0])).unwrap();
    let x = gen_signal(SignalSpec { kind, k, m, seed: derive_seed(seed, &[1]) }).unwrap();
    let b = matvec(&a, &x).unwrap();
    (a, x, b)
}

fn ls_residual_sq(a: &DesignMatrix, b: &[f64], idx: &[usize]) -> f64 {
    let sub = a.select_columns(idx);
    let (x, _) = lstsq_svd(&sub, b);
    let fit = a.combine(idx, &x);
    b.iter().zip(&fit).map(|(u, v)| (u - v).powi(2)).sum()
}

#[test]
fn exhaustive_search_confirms_unique_sparsest_support() {
    for seed in 0..3 {
        let (a, x, b) = problem(16, 64, 4, SignalKind::ZeroOne, 700 + seed);
        let best = (0..64)
            .combinations(4)
            .map(|s| (ls_residual_sq(&a, &b, &s), s))
            .min_by(|p, q| p.0.total_cmp(&q.0))
            .unwrap();
        assert_eq!(best.1, x.support());
    }
}

#[test]
fn zero_residual_with_few_atoms_is_the_true_signal() {
    // spark(A) = n + 1 for a Gaussian A, so a zero-residual solution with at
    // most n - k atoms must coincide with the k-sparse truth
    let mut recovered = 0;
    for seed in 0..20 {
        let (a, x, b) = problem(16, 64, 4, SignalKind::ZeroOne, 700 + seed);
        let cfg = GmpConfig { rho: 2, inner_tol: 1e-12, max_inner: 200, ..GmpConfig::default() };
        let (sol, _) = gmp_solve(&a, &b, &cfg, &[StopRule::ResidualNorm { r_2: 1e-10 }]).unwrap();
        assert!(matrix::residual(&a, &b, &sol).unwrap().norm() <= 1e-10);
        if sol.nnz() <= 12 {
            for (j, v) in sol.to_dense().iter().enumerate() {
                assert!((v - x.get(j)).abs() < 1e-8, "seed {seed}, atom {j}");
            }
            recovered += 1;
        }
    }
    assert!(recovered > 0);
}

#[test]
fn sgmp_picks_within_top_candidates() {
    let (a, _, b) = problem(32, 128, 10, SignalKind::Gaussian, 3);
    let g = correlate(&a, &Residual::new(b.clone())).unwrap();
    let mut order: Vec<usize> = (0..128).collect();
    order.sort_by(|&p, &q| g[q].abs().total_cmp(&g[p].abs()));
    let top16 = &order[..16];
    let cfg = GmpConfig { rho: 4, omega: 4, ..GmpConfig::default() };
    let picked = sgmp_select(&a, &b, &ActiveSet::new(128), &g, &cfg, &[]).unwrap();
    assert_eq!(picked.len(), 4);
    for j in picked {
        assert!(top16.contains(&j));
    }
}

#[test]
fn sgmp_with_unit_omega_reproduces_gmp_trace() {
    for seed in 0..5 {
        let (a, _, b) = problem(40, 160, 6, SignalKind::Gaussian, seed);
        let cfg = GmpConfig { rho: 2, ..GmpConfig::default() };
        let (x1, t1) = gmp_solve(&a, &b, &cfg, &default_stops(&cfg)).unwrap();
        let (x2, t2) = sgmp_solve(&a, &b, &cfg, &default_stops(&cfg)).unwrap();
        assert_eq!(x1, x2);
        assert_eq!(t1.objective_per_outer, t2.objective_per_outer);
        assert_eq!(t1.selections, t2.selections);
    }
}

#[test]
fn sgmp_objective_leads_gmp_on_most_seeds() {
    let mut wins = 0;
    for seed in 0..20 {
        let (a, _, b) = problem(64, 256, 12, SignalKind::Gaussian, 100 + seed);
        let base = GmpConfig { rho: 3, max_inner: 100, inner_tol: 1e-10, ..GmpConfig::default() };
        let stops = [StopRule::ResidualNorm { r_2: 1e-9 }];
        let (_, tg) = gmp_solve(&a, &b, &base, &stops).unwrap();
        let (_, ts) = sgmp_solve(&a, &b, &GmpConfig { omega: 4, ..base }, &stops).unwrap();
        let steps = tg.objective_per_outer.len().min(ts.objective_per_outer.len());
        let leads = (0..steps).all(|t| ts.objective_per_outer[t] <= tg.objective_per_outer[t] * (1.0 + 1e-9) + 1e-12);
        wins += leads as usize;
    }
    assert!(wins > 10, "sgmp led on {wins} of 20 seeds");
}

#[test]
fn nonrip_instance_converges_by_relative_delta() {
    let (a, _, b) = gen_nonrip(128, 512, 16, 7).unwrap();
    let cfg = GmpConfig { rho: 5, max_inner: 200, inner_tol: 1e-10, ..GmpConfig::default() };
    let (x, t) = gmp_solve(&a, &b, &cfg, &default_stops(&cfg)).unwrap();
    assert_eq!(t.status, SolveStatus::Stopped(StopKind::RelativeDelta));
    assert!(t.delta_per_outer.iter().all(|d| *d >= -1e-12));
    let r = matrix::residual(&a, &b, &x).unwrap();
    let bb: f64 = b.iter().map(|v| v * v).sum();
    assert!(r.norm().powi(2) <= 1e-6 * bb);
}

#[test]
fn rounds_stay_disjoint() {
    let (a, _, b) = problem(48, 200, 10, SignalKind::Uniform, 9);
    let cfg = GmpConfig { rho: 3, omega: 2, ..GmpConfig::default() };
    let (_, t) = sgmp_solve(&a, &b, &cfg, &default_stops(&cfg)).unwrap();
    let all: Vec<usize> = t.selections.iter().flatten().copied().collect();
    assert_eq!(all.iter().unique().count(), all.len());
}

#[test]
fn lasso_kkt_holds_at_grad_inf_termination() {
    let (a, _, b) = problem(64, 256, 8, SignalKind::Gaussian, 21);
    let lambda = harness::default_lambda(&a, &b).unwrap();
    let cfg = GmpConfig { rho: 4, lambda, inner_tol: 1e-9, max_inner: 5000, ..GmpConfig::default() };
    let (x, t) = gmp_solve(&a, &b, &cfg, &[StopRule::GradInf { r_inf: lambda * (1.0 + 1e-6) }]).unwrap();
    assert!(matches!(t.status, SolveStatus::Optimal | SolveStatus::Stopped(StopKind::GradInf)), "{:?}", t.status);
    assert!(gmp::kkt_report(&a, &b, &x, lambda).unwrap().holds(lambda, 1e-4));
}

#[test]
fn worst_case_selection_skips_excluded_atoms() {
    let g = [0.1, -5.0, 3.0, 5.0, -0.2];
    assert_eq!(worst_case_select(&g, &[1], 2, 0.0), vec![3, 2]);
    assert_eq!(worst_case_select(&g, &[], 2, 0.0), vec![1, 3]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn objective_never_increases(seed in 0u64..10_000, rho in 1usize..5, lambda_frac in 0.0f64..0.3) {
        let (a, _, mut b) = problem(24, 80, 6, SignalKind::Gaussian, seed);
        b[0] += 0.05;
        let lambda = lambda_frac * harness::default_lambda(&a, &b).unwrap() / 0.005;
        let cfg = GmpConfig { rho, lambda, ..GmpConfig::default() };
        let (_, t) = gmp_solve(&a, &b, &cfg, &default_stops(&cfg)).unwrap();
        let mut prev = t.theta0;
        for &f in &t.objective_per_outer {
            prop_assert!(f <= prev + 1e-12 * prev.max(1.0));
            prev = f;
        }
    }
}
