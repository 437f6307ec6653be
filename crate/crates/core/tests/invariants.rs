//! Structural and property-based invariants: table identities, regime
//! exclusivity, path-sample contracts, slow-variation behavior, and oracle
//! positive semidefiniteness.

use derw_core::model::{critical_case, diffusive_case, strong_case};
use derw_core::{
    build_tables, c_critical, c_diffusive, c_strong, classify, slln_limit, GaussianProcessOracle,
    ModelParams, OracleMode, PathSeed, Regime, SequenceRecursion, SequenceSpec,
};
use proptest::prelude::*;

fn grid(step: f64) -> Vec<f64> {
    let mut v = Vec::new();
    let mut x = 0.0;
    while x <= 1.0 + 1e-9 {
        v.push(x.min(1.0));
        x += step;
    }
    v
}

#[test]
fn diffusive_and_critical_conditions_never_overlap() {
    // Exhaustive over the 0.05 grid: whenever the critical conditions hold
    // at alpha = 1/(4p-2), none of the sqrt(n) conditions match.
    for &p in &grid(0.05) {
        if p <= 0.5 {
            continue;
        }
        let inv = 1.0 / (4.0 * p - 2.0);
        if !(0.0..=1.0).contains(&inv) {
            continue;
        }
        for &beta in &grid(0.05) {
            if critical_case(p, beta).is_some() {
                assert_eq!(
                    diffusive_case(p, inv, beta),
                    None,
                    "both theorems match p={p}, alpha={inv}, beta={beta}"
                );
            }
        }
    }
}

#[test]
fn strong_condition_excludes_the_other_two() {
    for &p in &grid(0.05) {
        for &alpha in &grid(0.05) {
            for &beta in &grid(0.05) {
                if strong_case(p, alpha, beta).is_some() {
                    assert_eq!(diffusive_case(p, alpha, beta), None);
                    if p > 0.5 {
                        let inv = 1.0 / (4.0 * p - 2.0);
                        if (alpha - inv).abs() <= 1e-12 {
                            assert_eq!(critical_case(p, beta), None);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn classified_constant_matches_sequences_module() {
    for &p in &grid(0.05) {
        for &alpha in &grid(0.05) {
            for &beta in &grid(0.05) {
                let params = ModelParams::new(
                    p,
                    0.5,
                    SequenceSpec::constant(alpha),
                    SequenceSpec::constant(beta),
                )
                .unwrap();
                match classify(&params) {
                    Regime::DiffusiveGaussian { constant, .. } => {
                        assert_eq!(constant, c_diffusive(alpha, beta, p).unwrap());
                    }
                    Regime::CriticalLog { constant, .. } => {
                        assert_eq!(constant, c_critical(beta, p).unwrap());
                    }
                    Regime::StrongElephant { constant, .. } => {
                        assert_eq!(constant, c_strong(alpha, beta, p).unwrap());
                    }
                    Regime::Unclassified { .. } => {}
                }
            }
        }
    }
}

#[test]
fn oracle_covariance_matrices_are_positive_semidefinite() {
    let grids: [&[f64]; 3] = [
        &[0.25, 0.5, 1.0],
        &[0.1, 0.2, 0.4, 0.8, 1.6, 3.2],
        &[0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0],
    ];
    let oracles = [
        GaussianProcessOracle {
            mode: OracleMode::Diffusive,
            constant: 5.0 / 3.0,
            exponent: 0.2,
        },
        GaussianProcessOracle {
            mode: OracleMode::Diffusive,
            constant: 1.0,
            exponent: 0.0,
        },
        GaussianProcessOracle {
            mode: OracleMode::Diffusive,
            constant: 2.0,
            exponent: 0.45,
        },
        GaussianProcessOracle {
            mode: OracleMode::Diffusive,
            constant: 0.75,
            exponent: -0.3,
        },
        GaussianProcessOracle {
            mode: OracleMode::Critical,
            constant: 0.91,
            exponent: 0.0,
        },
    ];
    for oracle in &oracles {
        for grid in &grids {
            let k = grid.len();
            let m = nalgebra::DMatrix::from_fn(k, k, |i, j| {
                let (s, t) = (grid[i].min(grid[j]), grid[i].max(grid[j]));
                oracle.covariance(s, t).unwrap()
            });
            let eigen = m.symmetric_eigen();
            for ev in eigen.eigenvalues.iter() {
                assert!(
                    *ev >= -1e-9,
                    "negative eigenvalue {ev} for {oracle:?} on {grid:?}"
                );
            }
        }
    }
}

#[test]
fn slow_variation_of_ell_and_rho() {
    // alpha_n = 0.5 + 1/n at p = 0.75: ell and rho vary slowly and their
    // ratio is Cauchy.
    let params = ModelParams::new(
        0.75,
        0.5,
        SequenceSpec::LimitPlusPower {
            limit: 0.5,
            coeff: 1.0,
            exponent: 1.0,
        },
        SequenceSpec::constant(0.5),
    )
    .unwrap();
    let mut rec = SequenceRecursion::new(&params).unwrap();
    let mut snapshots = Vec::new();
    for &n in &[10_000u64, 20_000, 50_000, 100_000, 200_000] {
        let row = rec.advance_to(n).unwrap();
        snapshots.push((n, row.ell, row.rho));
    }
    // rho_{[nt]}/rho_n -> 1 and ell_{[nt]}/ell_n -> 1 for t in {2, 5}.
    let by_n: std::collections::HashMap<u64, (f64, f64)> = snapshots
        .iter()
        .map(|&(n, ell, rho)| (n, (ell, rho)))
        .collect();
    for &(n, t) in &[(10_000u64, 2u64), (10_000, 5), (100_000, 2)] {
        let (ell_n, rho_n) = by_n[&n];
        let (ell_nt, rho_nt) = by_n[&(n * t)];
        assert!((rho_nt / rho_n - 1.0).abs() < 1e-3, "rho ratio at n={n}, t={t}");
        assert!((ell_nt / ell_n - 1.0).abs() < 1e-3, "ell ratio at n={n}, t={t}");
    }
    // Cauchy-type convergence of ell_n / rho_n along doublings.
    let (_, ell_a, rho_a) = snapshots[0];
    let (_, ell_b, rho_b) = snapshots[1];
    let (_, ell_c, rho_c) = snapshots[3];
    let (_, ell_d, rho_d) = snapshots[4];
    let diff_small = (ell_b / rho_b - ell_a / rho_a).abs();
    let diff_large = (ell_d / rho_d - ell_c / rho_c).abs();
    assert!(diff_small < 1e-6, "ell/rho not Cauchy: {diff_small}");
    assert!(diff_large < diff_small, "{diff_large} vs {diff_small}");
}

#[test]
fn mean_ratio_converges_to_strong_law_limit() {
    for (p, alpha, beta) in [(0.8, 0.5, 0.7), (0.5, 0.25, 0.9), (0.6, 1.0, 0.3)] {
        let params = ModelParams::new(
            p,
            0.5,
            SequenceSpec::constant(alpha),
            SequenceSpec::constant(beta),
        )
        .unwrap();
        let limit = slln_limit(alpha, beta, p).unwrap();
        let mut rec = SequenceRecursion::new(&params).unwrap();
        let near = rec.advance_to(10_000).unwrap().mean_s / 10_000.0;
        let far = rec.advance_to(100_000).unwrap().mean_s / 100_000.0;
        assert!(
            (far - limit).abs() <= (near - limit).abs() + 1e-12,
            "p={p} alpha={alpha}: {near} -> {far} vs {limit}"
        );
        assert!((far - limit).abs() < 5e-3, "p={p} alpha={alpha}: {far} vs {limit}");
    }
}

fn spec_strategy() -> impl Strategy<Value = SequenceSpec> {
    prop_oneof![
        (0.0..=1.0f64).prop_map(|c| SequenceSpec::Constant { c }),
        (0.0..=1.0f64, -2.0..=2.0f64, 0.1..=3.0f64).prop_map(|(limit, coeff, exponent)| {
            SequenceSpec::LimitPlusPower {
                limit,
                coeff,
                exponent,
            }
        }),
        (
            prop::collection::vec(0.0..=1.0f64, 0..5),
            0.0..=1.0f64
        )
            .prop_map(|(values, tail)| SequenceSpec::Table { values, tail }),
    ]
}

fn params_strategy() -> impl Strategy<Value = ModelParams> {
    (0.0..=1.0f64, 0.0..=1.0f64, spec_strategy(), spec_strategy()).prop_map(
        |(p, q, alpha, beta)| ModelParams { p, q, alpha, beta },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn table_invariants_hold(params in params_strategy()) {
        let n = 300u64;
        let tables = match build_tables(&params, n) {
            Ok(t) => t,
            // the p ~ 0, alpha ~ 1 degenerate corner is allowed to error
            Err(_) => return Ok(()),
        };
        prop_assert_eq!(tables.a(1), 1.0);
        prop_assert_eq!(tables.g(1), 1.0);
        prop_assert_eq!(tables.ell(1), 1.0);
        prop_assert_eq!(tables.rho(1), 1.0);
        prop_assert_eq!(tables.rho(2), 1.0);
        for k in 1..=n {
            let kf = k as f64;
            let a = tables.a(k);
            let gl = tables.g(k) * tables.ell(k);
            prop_assert!((a - gl).abs() <= 1e-10 * gl.abs().max(1.0),
                "a != g*ell at {}: {} vs {}", k, a, gl);
            prop_assert!(a > 0.0 && a <= kf * (1.0 + 1e-12));
            prop_assert!(tables.mean_x(k).abs() <= 1.0 + 1e-12);
            prop_assert!(tables.mean_s(k).abs() <= kf + 1e-9);
            let second = tables.second_s(k);
            let mean_sq = tables.mean_s(k) * tables.mean_s(k);
            prop_assert!(second <= kf * kf * (1.0 + 1e-12));
            prop_assert!(second >= mean_sq - 1e-9 * second.abs().max(1.0));
            if k > 1 {
                prop_assert!(tables.a_sq(k) >= tables.a_sq(k - 1) - 1e-15);
                prop_assert!(tables.b_sq(k) >= tables.b_sq(k - 1) - 1e-15);
                let gap = tables.b_sq(k) - tables.a_sq(k);
                let prev_gap = tables.b_sq(k - 1) - tables.a_sq(k - 1);
                prop_assert!(gap >= prev_gap - 1e-12);
            }
            prop_assert!(tables.a_sq(k) <= tables.b_sq(k) + 1e-12);
        }
    }

    #[test]
    fn path_contracts_hold(params in params_strategy(), master in 0u64..1000) {
        let n = 200u64;
        let checkpoints: Vec<u64> = (1..=n).collect();
        let path = derw_core::simulate_path(
            &params, None, n, PathSeed::new(master, 0), &checkpoints, false,
        ).unwrap();
        let mut prev = 0i64;
        for (i, &s) in path.s_values.iter().enumerate() {
            let step = (i + 1) as i64;
            prop_assert!(s.abs() <= step);
            prop_assert_eq!((s - step).rem_euclid(2), 0);
            prop_assert_eq!((s - prev).abs(), 1);
            prev = s;
        }
        let again = derw_core::simulate_path(
            &params, None, n, PathSeed::new(master, 0), &checkpoints, false,
        ).unwrap();
        prop_assert_eq!(path, again);
    }

    #[test]
    fn martingale_increment_bound_holds(params in params_strategy(), master in 0u64..1000) {
        let n = 150u64;
        let tables = match build_tables(&params, n) {
            Ok(t) => t,
            Err(_) => return Ok(()),
        };
        let path = derw_core::simulate_path(
            &params, Some(&tables), n, PathSeed::new(master, 1), &[n], true,
        ).unwrap();
        let diag = path.diagnostics.as_ref().unwrap();
        for (k, &y) in diag.y.iter().enumerate() {
            let bound = 2.0 / tables.a(k as u64 + 1);
            prop_assert!(y.abs() <= bound + 1e-12, "step {}: |{}| > {}", k + 1, y, bound);
        }
    }

    #[test]
    fn params_serde_round_trip(params in params_strategy()) {
        let json = serde_json::to_string(&params).unwrap();
        let back: ModelParams = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(params, back);
    }

    #[test]
    fn classify_is_deterministic(params in params_strategy()) {
        prop_assert_eq!(classify(&params), classify(&params));
    }
}
