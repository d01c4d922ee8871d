//! End-to-end checks against independent closed forms and brute-force oracles.

mod common {
    pub mod reset_oracle;
}

use std::sync::Arc;

use common::reset_oracle::ResetOracle;
use impulse_game::bsde::{evaluate_cost, McConfig};
use impulse_game::forward::{simulate_paths, PolicyPair};
use impulse_game::model::catalog;
use impulse_game::qvi::{extract_policies, solve_qvi, GridSpec, Region, SchemeOrdering};
use impulse_game::verify::{impulse_count_stats, semigroup_residual, truncation_convergence};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

fn reset_grid(nodes: usize, steps: usize) -> GridSpec {
    let s = catalog::reset(0.1);
    GridSpec::new(&s, vec![-2.0], vec![2.0], vec![nodes], Some(steps), None).unwrap()
}

#[test]
fn reset_matches_budget_oracle() {
    let spec = catalog::reset(0.1);
    let grid = reset_grid(41, 50);
    let oracle = ResetOracle::new(0.1, 50);
    for ordering in [SchemeOrdering::Lower, SchemeOrdering::Upper] {
        let v = solve_qvi(&spec, &grid, ordering, 1e-12).unwrap();
        let pol = extract_policies(&spec, &v, 1e-9).unwrap();
        for n in 0..=grid.time_steps {
            for k in grid.trusted_nodes() {
                let x = grid.coords(k)[0];
                let (want, _) = oracle.value(n, x);
                assert!((v.value(n, k) - want).abs() <= 1e-8, "n={n} x={x}: {} vs {want}", v.value(n, k));
            }
            let ours: Vec<i64> = pol.intervention_nodes(n).into_iter().map(|k| k as i64).collect();
            let theirs: Vec<i64> = (0..grid.node_count())
                .filter(|&k| oracle.intervenes(n, grid.coords(k)[0]))
                .map(|k| k as i64)
                .collect();
            let near = |a: &[i64], b: &[i64]| a.iter().all(|i| b.iter().any(|j| (i - j).abs() <= 1));
            assert!(near(&ours, &theirs) && near(&theirs, &ours), "region mismatch at slice {n}");
        }
    }
}

#[test]
fn reset_counts_match_oracle() {
    let spec = catalog::reset(0.1);
    let grid = reset_grid(41, 50);
    let oracle = ResetOracle::new(0.1, 50);
    let v = solve_qvi(&spec, &grid, SchemeOrdering::Lower, 1e-12).unwrap();
    let pol = Arc::new(extract_policies(&spec, &v, 1e-9).unwrap());
    for x0 in [0.0, 0.2, 0.5, -0.9, 1.5] {
        let stats = impulse_count_stats(&spec, &v, &pol, 0.0, &[x0], &McConfig::new(8, 50, 1)).unwrap();
        let (_, want) = oracle.value(0, x0);
        assert!(stats.counts.iter().all(|&c| c == want), "x0={x0}: {:?} vs {want}", stats.counts);
        assert!(stats.mean <= stats.range_bound);
    }
}

#[test]
fn reset_truncation_is_exact_beyond_oracle_budget() {
    let spec = catalog::reset(0.1);
    let grid = reset_grid(41, 50);
    let out = truncation_convergence(&spec, &grid, SchemeOrdering::Lower, 4, 1e-12).unwrap();
    assert!(out.gaps[0] > 0.0);
    assert!(out.gaps[1..].iter().all(|&g| g.abs() <= 1e-12), "{:?}", out.gaps);
    assert!(out.monotone_violation <= 1e-10);
}

#[test]
fn heat_grid_tracks_closed_form() {
    let s = 0.5;
    let spec = catalog::heat(s);
    let grid = GridSpec::new(&spec, vec![-2.0], vec![2.0], vec![101], None, None).unwrap();
    let v = solve_qvi(&spec, &grid, SchemeOrdering::Lower, 1e-12).unwrap();
    let mut err = 0.0f64;
    for n in 0..=grid.time_steps {
        let t = grid.time(n);
        for k in grid.trusted_nodes() {
            let x = grid.coords(k)[0];
            err = err.max((v.value(n, k) - (x * x + s * s * (1.0 - t))).abs());
        }
    }
    assert!(err <= 5e-2, "sup error {err}");
    let ends = v.slice(grid.time_steps);
    for k in 0..grid.node_count() {
        let x = grid.coords(k)[0];
        assert_eq!(ends[k], x * x);
    }
}

#[test]
fn linear_driver_semigroup() {
    let (r, s) = (0.5, 0.1);
    let spec = catalog::linear_driver(r, s);
    let mc = McConfig::new(20_000, 20, 5);
    let x0 = [0.3];
    let out = semigroup_residual(&spec, 0.0, &x0, 0.5, &PolicyPair::constant(0), &mc).unwrap();
    assert!(out.difference <= 3.0 * out.stderr + 2.0 * out.dt, "{out:?}");
    // explicit Euler in time: (1 + r h)^M ψ
    let want = (1.0 + r / 20.0f64).powi(20) * x0[0];
    assert!((out.lhs - want).abs() <= 3.0 * out.stderr + 1e-9, "{} vs {want}", out.lhs);
    let exact = (r * 1.0f64).exp() * x0[0];
    let est = evaluate_cost(&spec, 0.0, &x0, &PolicyPair::constant(0), &mc).unwrap();
    assert!((est.value - exact).abs() <= 3.0 * est.stderr + 0.01);
}

#[test]
fn running_supremum_matches_independent_sampler() {
    let spec = catalog::heat(1.0);
    let (paths, steps) = (20_000, 32);
    let bundle = simulate_paths(&spec, 0.0, &[0.0], &PolicyPair::constant(0), paths, steps, 11).unwrap();
    let ours = bundle.estimate_moment_bound(2.0);

    let mut rng = rand::rngs::StdRng::seed_from_u64(99);
    let h = (1.0 / steps as f64).sqrt();
    let sups: Vec<f64> = (0..paths)
        .map(|_| {
            let mut w = 0.0f64;
            let mut m = 0.0f64;
            for _ in 0..steps {
                let z: f64 = StandardNormal.sample(&mut rng);
                w += h * z;
                m = m.max(w.abs());
            }
            m * m
        })
        .collect();
    let mean = sups.iter().sum::<f64>() / paths as f64;
    let var = sups.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (paths - 1) as f64;
    let se = (var / paths as f64).sqrt();
    let tol = 4.0 * (se * se + ours.stderr * ours.stderr).sqrt();
    assert!((ours.estimate - mean).abs() <= tol, "{} vs {mean} ± {tol}", ours.estimate);
    // Doob: E sup|W|² ≤ 4 E|W_1|²
    assert!(ours.estimate <= 4.0);
}

#[test]
fn intervention_region_is_empty_for_prohibitive_cost() {
    let spec = catalog::heat(0.5);
    let grid = GridSpec::new(&spec, vec![-2.0], vec![2.0], vec![41], None, None).unwrap();
    let v = solve_qvi(&spec, &grid, SchemeOrdering::Upper, 1e-12).unwrap();
    let pol = extract_policies(&spec, &v, 1e-9).unwrap();
    assert!(pol.region.iter().all(|&r| r == Region::Continuation));
}
