//! The full verification run driven by a [`Config`].

use std::sync::Arc;
use std::time::Instant;

use super::checks::*;
use super::report::{TestRecord, VerificationReport};
use crate::bsde::McConfig;
use crate::error::{Error, Result};
use crate::forward::simulate_paths;
use crate::model::{sample_points, validate_assumptions, Config, ProblemSpec};
use crate::qvi::{extract_policies, solve_qvi, solve_truncated, GridSpec, SchemeOrdering, ValueGrid};

/// Window length of the DPP check, in grid time steps.
pub const DPP_STEPS: usize = 4;
/// Shift used by the comparison test.
pub const COMPARISON_SHIFT: f64 = 0.1;
/// Fraction of comparison replications that must respect the ordering.
pub const COMPARISON_FRACTION: f64 = 0.95;
pub const GENERATOR_STEPS: [f64; 3] = [0.04, 0.02, 0.01];
/// Truncation level of the advisory time-regularity check.
pub const HOLDER_K: usize = 2;
const MONOTONE_TOL: f64 = 1e-10;

pub fn grid_from_config(cfg: &Config) -> Result<GridSpec> {
    let g = &cfg.grid;
    GridSpec::new(&cfg.problem, g.lo.clone(), g.hi.clone(), g.nodes.clone(), g.time_steps, g.margin)
}

pub fn mc_from_config(cfg: &Config) -> McConfig {
    let m = &cfg.mc;
    McConfig {
        n_paths: m.paths,
        n_steps: m.steps,
        seed: m.seed,
        degree: m.degree,
        antithetic: m.antithetic,
    }
}

/// Orderings requested by `solver.ordering`; `both` puts the lower one first.
pub fn orderings(name: &str) -> Result<Vec<SchemeOrdering>> {
    match name {
        "both" => Ok(vec![SchemeOrdering::Lower, SchemeOrdering::Upper]),
        other => Ok(vec![other.parse()?]),
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64()))
}

fn with_runtime(mut r: TestRecord, secs: f64) -> TestRecord {
    r.runtime = secs;
    r
}

/// Runs every check in a fixed order. Records are deterministic given the
/// configuration; only `runtime` varies between runs.
pub fn run_suite(cfg: &Config) -> Result<VerificationReport> {
    let spec = &cfg.problem;
    let solver = &cfg.solver;
    let grid = grid_from_config(cfg)?;
    let mc = mc_from_config(cfg);
    let t0 = cfg.mc.t0;
    let x0 = cfg.mc.x0.as_slice();
    if x0.len() != spec.state_dim {
        return Err(Error::Dimension(format!("mc.x0 needs {} entries", spec.state_dim)));
    }
    let primary = orderings(&solver.ordering)?[0];
    let dx = (0..grid.dim()).map(|i| grid.dx(i)).fold(0.0, f64::max);
    let dt = grid.dt();
    let mut report = VerificationReport::default();

    // Standing assumptions.
    let (validation, secs) = timed(|| {
        let pts = sample_points(spec, &grid.lo, &grid.hi, solver.validation_samples, mc.seed);
        Ok(validate_assumptions(spec, &pts, solver.validation_tol))
    })?;
    let worst = validation.checks.iter().map(|c| c.worst_violation).fold(f64::NEG_INFINITY, f64::max);
    let failing: Vec<&str> = validation.checks.iter().filter(|c| !c.pass).map(|c| c.anchor.as_str()).collect();
    report.push(with_runtime(
        TestRecord::one_sided("assumptions", "standing assumptions on the coefficients", solver.validation_samples, worst, solver.validation_tol)
            .detail("failing", &failing)
            .require(validation.passed()),
        secs,
    ));

    // Both orderings and their gap.
    let ((lower, upper), secs) = timed(|| {
        Ok((
            solve_qvi(spec, &grid, SchemeOrdering::Lower, solver.tol)?,
            solve_qvi(spec, &grid, SchemeOrdering::Upper, solver.tol)?,
        ))
    })?;
    let gap = value_gap(&upper, &lower)?;
    report.push(with_runtime(
        TestRecord::one_sided("value_gap", "upper and lower values coincide", grid.trusted_nodes().len(), gap.gap, solver.c_scheme * (dt + dx))
            .detail("t", gap.t)
            .detail("x", &gap.x),
        secs,
    ));
    report.push(
        TestRecord::one_sided("ordering_sign", "upper ≥ lower nodewise", grid.trusted_nodes().len(), 0.0 - gap.min_difference, MONOTONE_TOL),
    );
    let vgrid: &ValueGrid = match primary {
        SchemeOrdering::Lower => &lower,
        SchemeOrdering::Upper => &upper,
    };

    // Truncation.
    let (trunc, secs) = timed(|| truncation_convergence(spec, &grid, primary, solver.k, solver.tol))?;
    let samples = trunc.gaps.len();
    report.push(with_runtime(
        TestRecord::one_sided("truncation_monotone", "V^k nondecreasing in k", samples, trunc.monotone_violation, MONOTONE_TOL)
            .detail("gaps", &trunc.gaps),
        secs,
    ));
    report.push(
        TestRecord::one_sided("truncation_gap", "g(k) nonincreasing and nonnegative", samples, trunc.gap_increase, MONOTONE_TOL)
            .detail("min_difference", trunc.min_difference)
            .require(trunc.min_difference >= -MONOTONE_TOL),
    );
    report.push(
        TestRecord::one_sided("truncation_rate", "g(k) ≤ C/√k", samples, trunc.rate_constant, solver.bound_c).advisory(),
    );

    // Dynamic programming residual.
    let dpp_mc = McConfig { n_steps: DPP_STEPS, ..mc.clone() };
    let pts = dpp_sample_points(&grid, solver.dpp_samples, DPP_STEPS);
    let (zero, secs) = timed(|| dpp_residual(spec, vgrid, &pts, 0.0, &dpp_mc))?;
    let r0 = zero.iter().map(|o| o.residual).fold(0.0, f64::max);
    report.push(with_runtime(
        TestRecord::one_sided("dpp_zero_step", "dynamic programming at h = 0", pts.len(), r0, 0.0),
        secs,
    ));
    let h = DPP_STEPS as f64 * dt;
    let (out, secs) = timed(|| dpp_residual(spec, vgrid, &pts, h, &dpp_mc))?;
    let excess = out.iter().map(|o| o.residual - 3.0 * o.stderr).fold(f64::NEG_INFINITY, f64::max);
    report.push(with_runtime(
        TestRecord::one_sided("dpp_residual", "dynamic programming principle", pts.len(), excess, solver.c_scheme * (h + dx))
            .detail("h", h)
            .detail("c_scheme", solver.c_scheme)
            .detail("max_residual", out.iter().map(|o| o.residual).fold(0.0, f64::max))
            .detail("points", &out),
        secs,
    ));

    // Intervention counts under the extracted policies.
    let policy = Arc::new(extract_policies(spec, vgrid, solver.tol.max(1e-9))?);
    let pair = policy.policy_pair();
    let (counts, secs) = timed(|| impulse_count_stats(spec, vgrid, &policy, t0, x0, &mc))?;
    report.push(with_runtime(
        TestRecord::one_sided("impulse_count", "each intervention pays at least δ", mc.n_paths, counts.mean, counts.range_bound)
            .detail("stderr", counts.stderr)
            .detail("max", counts.max),
        secs,
    ));
    let norm_x0 = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
    report.push(
        TestRecord::one_sided(
            "impulse_count_growth",
            "E[N] ≤ C(1 + |x|^ρ)",
            mc.n_paths,
            counts.mean,
            solver.bound_c * (1.0 + norm_x0.powf(spec.constants.growth_rho)),
        ),
    );

    // Semigroup property at the midpoint of [t0, T].
    let half = (mc.n_steps / 2) as f64 * (spec.horizon - t0) / mc.n_steps as f64;
    let (semi, secs) = timed(|| semigroup_residual(spec, t0, x0, half, &pair, &mc))?;
    report.push(with_runtime(
        TestRecord::one_sided("semigroup", "semigroup property of the backward operator", mc.n_paths, semi.difference, 3.0 * semi.stderr + 2.0 * semi.dt)
            .detail("lhs", semi.lhs)
            .detail("rhs", semi.rhs),
        secs,
    ));

    // Comparison and stability of the backward equation.
    let (cmp, secs) = timed(|| comparison_test(spec, t0, x0, &pair, &mc, COMPARISON_SHIFT, solver.replications))?;
    let broken = (cmp.replications - cmp.holds) as f64 / cmp.replications.max(1) as f64;
    report.push(with_runtime(
        TestRecord::one_sided("comparison", "comparison principle", cmp.replications, broken, 1.0 - COMPARISON_FRACTION)
            .detail("differences", &cmp.differences),
        secs,
    ));
    let (stab, secs) = timed(|| stability_test(spec, t0, x0, &pair, &mc, &[0.1, 0.01]))?;
    report.push(with_runtime(
        TestRecord::one_sided("stability", "a priori stability estimate", 2, stab.ratio, solver.bound_c)
            .detail("differences", &stab.differences),
        secs,
    ));

    // Second moment of the running supremum.
    let (moment, secs) = timed(|| {
        let bundle = simulate_paths(spec, t0, x0, &pair, mc.n_paths, mc.n_steps, mc.seed)?;
        Ok(bundle.estimate_moment_bound(2.0))
    })?;
    report.push(with_runtime(
        TestRecord::one_sided("moment", "E sup|X|² ≤ C(1 + |x|²)", mc.n_paths, moment.estimate, solver.bound_c * (1.0 + norm_x0 * norm_x0))
            .detail("stderr", moment.stderr),
        secs,
    ));

    // Generator of the backward operator on φ = |x|².
    let (gen, secs) = timed(|| generator_check(spec, t0, x0, &mc))?;
    report.push(with_runtime(gen, secs));

    // Time regularity of a truncated value, advisory only.
    let (holder, secs) = timed(|| holder_smoke(spec, &grid, primary))?;
    report.push(with_runtime(holder, secs));

    Ok(report)
}

/// `r(h)` must sit within `3·stderr + c_scheme·h²` for every `h`, and the
/// part of `r(h)/h` not explained by noise must shrink with `h`.
fn generator_check(spec: &ProblemSpec, t0: f64, x0: &[f64], mc: &McConfig) -> Result<TestRecord> {
    let n = spec.state_dim;
    let phi = SmoothFn::new(|_, x: &[f64]| x.iter().map(|v| v * v).sum())
        .with_time_derivative(|_, _| 0.0)
        .with_gradient(|_, x: &[f64]| x.iter().map(|v| 2.0 * v).collect())
        .with_hessian(move |_, _| {
            let mut h = vec![0.0; n * n];
            for i in 0..n {
                h[i * n + i] = 2.0;
            }
            h
        });
    let gen_mc = McConfig {
        n_steps: 4,
        antithetic: true,
        n_paths: mc.n_paths + mc.n_paths % 2,
        ..mc.clone()
    };
    let hs: Vec<f64> = GENERATOR_STEPS.iter().copied().filter(|&h| t0 + h <= spec.horizon).collect();
    let points = generator_consistency(spec, &phi, t0, x0, 0, &hs, &gen_mc)?;
    let excess: Vec<f64> = points.iter().map(|p| (p.residual - 3.0 * p.stderr).max(0.0) / p.h).collect();
    let statistic = points
        .iter()
        .map(|p| (p.residual - 3.0 * p.stderr) / (p.h * p.h))
        .fold(f64::NEG_INFINITY, f64::max);
    let shrinking = excess.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    Ok(TestRecord::one_sided("generator", "generator of the backward operator", points.len(), statistic, 1.0)
        .detail("points", &points)
        .detail("excess_over_h", &excess)
        .require(shrinking))
}

/// `max |v(t_n, x) − v(t_{n+j}, x)|` over trusted nodes for lags 8, 4, 2, 1
/// steps; passes when the differences shrink with the lag.
fn holder_smoke(spec: &ProblemSpec, grid: &GridSpec, ordering: SchemeOrdering) -> Result<TestRecord> {
    let v = solve_truncated(spec, grid, ordering, HOLDER_K)?;
    let trusted = grid.trusted_nodes();
    let lags: Vec<usize> = [8usize, 4, 2, 1].into_iter().filter(|&j| j <= grid.time_steps).collect();
    let diffs: Vec<f64> = lags
        .iter()
        .map(|&j| {
            (0..=grid.time_steps - j)
                .flat_map(|n| trusted.iter().map(move |&k| (n, k)))
                .map(|(n, k)| (v.value(n, k) - v.value(n + j, k)).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let shrinking = diffs.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let first = diffs.first().copied().unwrap_or(0.0);
    let last = diffs.last().copied().unwrap_or(0.0);
    Ok(TestRecord::one_sided("time_regularity", "value differences shrink as |t − t'| → 0", lags.len(), last, first)
        .detail("lags", &lags)
        .detail("differences", &diffs)
        .require(shrinking)
        .advisory())
}
