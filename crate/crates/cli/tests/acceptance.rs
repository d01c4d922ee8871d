//! Acceptance criteria 1–10. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; the process fails if any
//! criterion does.

#[path = "../../core/tests/common/reset_oracle.rs"]
mod reset_oracle;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use impulse_game::bsde::McConfig;
use impulse_game::forward::PolicyPair;
use impulse_game::model::{catalog, ProblemSpec};
use impulse_game::qvi::{extract_policies, solve_qvi, GridSpec, SchemeOrdering, ValueGrid};
use impulse_game::verify::{
    comparison_test, dpp_residual, dpp_sample_points, generator_consistency, impulse_count_stats, semigroup_residual,
    truncation_convergence, value_gap, SmoothFn,
};
use impulse_game_cli::sha256_hex;
use reset_oracle::ResetOracle;

// 1. heat accuracy
const HEAT_S: f64 = 0.5;
const HEAT_NODES: usize = 201;
const HEAT_SUP_TOL: f64 = 5e-2;
const HEAT_HALVING: f64 = 2.0;
const HEAT_HALVING_SLACK: f64 = 0.3;
const HEAT_SECONDS: f64 = 30.0;
// 2. brute-force oracle
const ORACLE_COST: f64 = 0.1;
const ORACLE_NODES: usize = 81;
const ORACLE_STEPS: usize = 100;
const ORACLE_TOL: f64 = 1e-8;
const ORACLE_SECONDS: f64 = 10.0;
// 3. truncation
const TRUNC_K: usize = 16;
const MONOTONE_TOL: f64 = 1e-10;
// 4. semigroup
const SEMI_R: f64 = 0.5;
const SEMI_S: f64 = 0.1;
const SEMI_PATHS: usize = 100_000;
const SEMI_STEPS: usize = 50;
const SEMI_SECONDS: f64 = 60.0;
// 5. comparison
const CMP_SHIFT: f64 = 0.1;
const CMP_REPLICATIONS: usize = 20;
const CMP_REQUIRED: usize = 19;
// 6. DPP residual
const DPP_NODES: usize = 101;
const DPP_SAMPLES: usize = 10;
const DPP_H_STEPS: usize = 4;
const DPP_C_SCHEME: f64 = 1.0;
const DPP_PATHS: usize = 20_000;
// 7. generator
const GEN_HS: [f64; 3] = [0.04, 0.02, 0.01];
const GEN_PATHS: usize = 20_000;
const GEN_BUDGET: f64 = 1.0;
// 8. value gap
const GAP_LADDER: [usize; 3] = [81, 161, 321];
const GAP_FINEST_TOL: f64 = 2e-2;
const GAP_SECONDS: f64 = 120.0;
// 9. intervention counts
const COUNT_PATHS: usize = 2000;

struct Outcome {
    pass: bool,
    summary: String,
}

fn outcome(pass: bool, summary: String) -> Outcome {
    Outcome { pass, summary }
}

fn heat_grid(spec: &ProblemSpec, nodes: usize) -> GridSpec {
    GridSpec::new(spec, vec![-2.0], vec![2.0], vec![nodes], None, None).unwrap()
}

fn heat_error(spec: &ProblemSpec, grid: &GridSpec) -> f64 {
    let v = solve_qvi(spec, grid, SchemeOrdering::Lower, 1e-12).unwrap();
    let mut err = 0.0f64;
    for n in 0..=grid.time_steps {
        let t = grid.time(n);
        for k in grid.trusted_nodes() {
            let x = grid.coords(k)[0];
            err = err.max((v.value(n, k) - (x * x + HEAT_S * HEAT_S * (spec.horizon - t))).abs());
        }
    }
    err
}

fn criterion_1() -> Outcome {
    let spec = catalog::heat(HEAT_S);
    let grid = heat_grid(&spec, HEAT_NODES);
    let start = Instant::now();
    let coarse = heat_error(&spec, &grid);
    let secs = start.elapsed().as_secs_f64();
    let fine = heat_error(&spec, &grid.refined());
    let ratio = coarse / fine;
    let lo = HEAT_HALVING * (1.0 - HEAT_HALVING_SLACK);
    let hi = HEAT_HALVING * (1.0 + HEAT_HALVING_SLACK);
    let pass = coarse <= HEAT_SUP_TOL && (lo..=hi).contains(&ratio) && secs <= HEAT_SECONDS;
    outcome(
        pass,
        format!(
            "heat sup-error {coarse:.3e} (≤ {HEAT_SUP_TOL:e}), refined {fine:.3e}, ratio {ratio:.3} (need [{lo:.1}, {hi:.1}]), {secs:.2}s"
        ),
    )
}

fn criterion_2() -> Outcome {
    let spec = catalog::reset(ORACLE_COST);
    let grid = GridSpec::new(&spec, vec![-2.0], vec![2.0], vec![ORACLE_NODES], Some(ORACLE_STEPS), None).unwrap();
    let oracle = ResetOracle::new(ORACLE_COST, ORACLE_STEPS);
    let start = Instant::now();
    let v = solve_qvi(&spec, &grid, SchemeOrdering::Lower, 1e-12).unwrap();
    let pol = extract_policies(&spec, &v, 1e-9).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut err = 0.0f64;
    let mut region_ok = true;
    for n in 0..=grid.time_steps {
        for k in grid.trusted_nodes() {
            err = err.max((v.value(n, k) - oracle.value(n, grid.coords(k)[0]).0).abs());
        }
        let ours: Vec<i64> = pol.intervention_nodes(n).into_iter().map(|k| k as i64).collect();
        let theirs: Vec<i64> = (0..grid.node_count())
            .filter(|&k| oracle.intervenes(n, grid.coords(k)[0]))
            .map(|k| k as i64)
            .collect();
        let near = |a: &[i64], b: &[i64]| a.iter().all(|i| b.iter().any(|j| (i - j).abs() <= 1));
        region_ok &= near(&ours, &theirs) && near(&theirs, &ours);
    }
    outcome(
        err <= ORACLE_TOL && region_ok && secs <= ORACLE_SECONDS,
        format!("reset vs budget oracle: max error {err:.2e} (≤ {ORACLE_TOL:e}), region within one cell: {region_ok}, {secs:.2}s"),
    )
}

fn criterion_3() -> Outcome {
    let heat = catalog::heat(HEAT_S);
    let reset = catalog::reset(ORACLE_COST);
    let cases = [
        ("heat", &heat, heat_grid(&heat, 101)),
        ("reset", &reset, GridSpec::new(&reset, vec![-2.0], vec![2.0], vec![41], Some(50), None).unwrap()),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, spec, grid) in &cases {
        for ordering in [SchemeOrdering::Lower, SchemeOrdering::Upper] {
            let out = truncation_convergence(spec, grid, ordering, TRUNC_K, 1e-12).unwrap();
            let ok = out.monotone_violation <= MONOTONE_TOL
                && out.gap_increase <= MONOTONE_TOL
                && out.min_difference >= -MONOTONE_TOL
                && out.rate_constant.is_finite();
            pass &= ok;
            parts.push(format!("{name}/{}: Ĉ = {:.3e}", ordering.name(), out.rate_constant));
        }
    }
    outcome(pass, format!("truncation monotone, g(k) nonincreasing for k ≤ {TRUNC_K}; {}", parts.join(", ")))
}

fn criterion_4() -> Outcome {
    let spec = catalog::linear_driver(SEMI_R, SEMI_S);
    let mc = McConfig::new(SEMI_PATHS, SEMI_STEPS, 2024);
    let start = Instant::now();
    let out = semigroup_residual(&spec, 0.0, &[0.3], spec.horizon / 2.0, &PolicyPair::constant(0), &mc).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let tol = 3.0 * out.stderr + 2.0 * out.dt;
    outcome(
        out.difference <= tol && secs <= SEMI_SECONDS,
        format!("semigroup |lhs − rhs| = {:.3e} (≤ {tol:.3e}), lhs {:.5}, rhs {:.5}, {secs:.2}s", out.difference, out.lhs, out.rhs),
    )
}

fn criterion_5() -> Outcome {
    let spec = catalog::linear_driver(SEMI_R, 0.3);
    let mc = McConfig::new(2000, 20, 5);
    let out = comparison_test(&spec, 0.0, &[0.3], &PolicyPair::constant(0), &mc, CMP_SHIFT, CMP_REPLICATIONS).unwrap();
    outcome(
        out.holds >= CMP_REQUIRED,
        format!("comparison ordering held in {}/{CMP_REPLICATIONS} replications (need {CMP_REQUIRED})", out.holds),
    )
}

fn criterion_6() -> Outcome {
    let spec = catalog::heat(HEAT_S);
    let grid = heat_grid(&spec, DPP_NODES);
    let v = solve_qvi(&spec, &grid, SchemeOrdering::Lower, 1e-12).unwrap();
    let pts = dpp_sample_points(&grid, DPP_SAMPLES, DPP_H_STEPS);
    let mc = McConfig::new(DPP_PATHS, DPP_H_STEPS, 31);
    let zero = dpp_residual(&spec, &v, &pts, 0.0, &mc).unwrap();
    let r0 = zero.iter().map(|o| o.residual).fold(0.0, f64::max);
    let h = DPP_H_STEPS as f64 * grid.dt();
    let dx = grid.dx(0);
    let out = dpp_residual(&spec, &v, &pts, h, &mc).unwrap();
    let budget = DPP_C_SCHEME * (h + dx);
    let ok = out.iter().all(|o| o.residual <= 3.0 * o.stderr + budget);
    let worst = out.iter().map(|o| o.residual).fold(0.0, f64::max);
    outcome(
        ok && r0 == 0.0,
        format!("DPP max residual {worst:.3e} within 3·se + C_scheme·(h + Δx), C_scheme = {DPP_C_SCHEME}, h = {h:.4}, Δx = {dx:.3}; h = 0 residual {r0:e}"),
    )
}

fn criterion_7() -> Outcome {
    let spec = catalog::heat(HEAT_S);
    let big_t = spec.horizon;
    let phi = SmoothFn::new(move |t, x: &[f64]| x[0] * x[0] + HEAT_S * HEAT_S * (big_t - t))
        .with_time_derivative(|_, _| -HEAT_S * HEAT_S)
        .with_gradient(|_, x: &[f64]| vec![2.0 * x[0]])
        .with_hessian(|_, _| vec![2.0]);
    let mc = McConfig::new(GEN_PATHS, 4, 77).with_antithetic(true);
    let pts = generator_consistency(&spec, &phi, 0.2, &[0.4], 0, &GEN_HS, &mc).unwrap();
    let within = pts.iter().all(|p| p.residual <= 3.0 * p.stderr + GEN_BUDGET * p.h * p.h);
    let excess: Vec<f64> = pts.iter().map(|p| (p.residual - 3.0 * p.stderr).max(0.0) / p.h).collect();
    let decreasing = excess.windows(2).all(|w| w[1] <= w[0]);
    let ratios: Vec<String> = pts.iter().map(|p| format!("{:.2e}", p.residual / p.h)).collect();
    outcome(
        within && decreasing,
        format!("generator r(h)/h = [{}] for h = {GEN_HS:?}, within 3·se/h + budget, excess decreasing: {decreasing}", ratios.join(", ")),
    )
}

fn criterion_8() -> Outcome {
    let spec = catalog::reset_game(0.1, 0.5);
    let start = Instant::now();
    let gaps: Vec<f64> = GAP_LADDER
        .iter()
        .map(|&m| {
            let g = GridSpec::new(&spec, vec![-2.0], vec![2.0], vec![m], None, None).unwrap();
            let up = solve_qvi(&spec, &g, SchemeOrdering::Upper, 1e-12).unwrap();
            let lo = solve_qvi(&spec, &g, SchemeOrdering::Lower, 1e-12).unwrap();
            value_gap(&up, &lo).unwrap().gap
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    let finest = *gaps.last().unwrap();
    let shown: Vec<String> = gaps.iter().map(|g| format!("{g:.3e}")).collect();
    outcome(
        decreasing && finest <= GAP_FINEST_TOL && secs <= GAP_SECONDS,
        format!("value gap over {GAP_LADDER:?} nodes: [{}] (finest ≤ {GAP_FINEST_TOL:e}), {secs:.2}s", shown.join(", ")),
    )
}

fn criterion_9() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let reset_grid = |s: &ProblemSpec| GridSpec::new(s, vec![-2.0], vec![2.0], vec![41], Some(50), None).unwrap();
    let cases: Vec<(&str, ProblemSpec, fn(&ProblemSpec) -> GridSpec)> = vec![
        ("heat", catalog::heat(HEAT_S), |s| heat_grid(s, 101)),
        ("reset", catalog::reset(ORACLE_COST), |s| GridSpec::new(s, vec![-2.0], vec![2.0], vec![41], Some(50), None).unwrap()),
        ("reset_game", catalog::reset_game(0.1, 0.5), |s| heat_grid(s, 81)),
        ("linear_driver", catalog::linear_driver(SEMI_R, SEMI_S), |s| heat_grid(s, 81)),
    ];
    let mc = McConfig::new(COUNT_PATHS, 50, 9);
    for (name, spec, grid_of) in &cases {
        let grid = grid_of(spec);
        let v: ValueGrid = solve_qvi(spec, &grid, SchemeOrdering::Lower, 1e-12).unwrap();
        let pol = Arc::new(extract_policies(spec, &v, 1e-9).unwrap());
        let stats = impulse_count_stats(spec, &v, &pol, 0.0, &[0.5], &mc).unwrap();
        pass &= stats.mean <= stats.range_bound;
        parts.push(format!("{name} E[N] = {:.3} ≤ {:.2}", stats.mean, stats.range_bound));
    }
    let spec = catalog::reset(ORACLE_COST);
    let grid = reset_grid(&spec);
    let oracle = ResetOracle::new(ORACLE_COST, 50);
    let v = solve_qvi(&spec, &grid, SchemeOrdering::Lower, 1e-12).unwrap();
    let pol = Arc::new(extract_policies(&spec, &v, 1e-9).unwrap());
    let mut exact = true;
    for x0 in [0.0, 0.2, 0.5, -1.0, 1.8] {
        let stats = impulse_count_stats(&spec, &v, &pol, 0.0, &[x0], &McConfig::new(16, 50, 1)).unwrap();
        let want = oracle.value(0, x0).1;
        exact &= stats.counts.iter().all(|&c| c == want);
    }
    pass &= exact;
    outcome(pass, format!("{}; deterministic counts match oracle: {exact}", parts.join(", ")))
}

fn run_verify(config: &Path, out: &Path, threads: &str) -> String {
    let status = Command::new(env!("CARGO_BIN_EXE_impulse-game"))
        .args(["verify", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("SOLVER_THREADS", threads)
        .output()
        .expect("binary runs");
    assert!(status.status.code().is_some(), "verify terminated by a signal");
    sha256_hex(&std::fs::read(out.join("report.json")).expect("report written"))
}

fn criterion_10() -> Outcome {
    let config: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", "reset_game.json"].iter().collect();
    let dir = tempfile::tempdir().unwrap();
    let sums: Vec<String> = [("a", "1"), ("b", "1"), ("c", "4"), ("d", "4")]
        .iter()
        .map(|(sub, threads)| run_verify(&config, &dir.path().join(sub), threads))
        .collect();
    let same = sums.iter().all(|s| *s == sums[0]);
    outcome(same, format!("verify report sha256 identical over SOLVER_THREADS ∈ {{1, 4}}, two runs each: {}", &sums[0][..16]))
}

fn main() {
    let criteria: [(usize, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let mut failed = Vec::new();
    for (id, run) in criteria {
        let o = run();
        println!("criterion {id:>2}: {}  {}", if o.pass { "PASS" } else { "FAIL" }, o.summary);
        if !o.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance: all criteria pass");
}
