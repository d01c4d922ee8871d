//! Individual verification statistics. Each function returns raw numbers;
//! [`super::suite`] turns them into report records.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bsde::{backward_semigroup, solve_bundle, evaluate_cost, McConfig};
use crate::error::{Error, Result};
use crate::forward::{derive_seed, simulate_paths, simulate_window, ImpulseSchedule, PolicyPair, Starts};
use crate::model::ProblemSpec;
use crate::qvi::{solve_qvi, solve_truncated_family, GridSpec, PolicyGrid, SchemeOrdering, ValueGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DppOutcome {
    pub t: f64,
    pub x: Vec<f64>,
    pub value: f64,
    pub rhs: f64,
    pub residual: f64,
    pub stderr: f64,
    pub action: usize,
    /// Impulse fired at `t` by the selected control, if any.
    pub impulse: Option<usize>,
}

/// `count` points `(t, x)` on mesh times with `t + h_steps·Δt ≤ T`, spread
/// over trusted nodes.
pub fn dpp_sample_points(grid: &GridSpec, count: usize, h_steps: usize) -> Vec<(f64, Vec<f64>)> {
    let trusted = grid.trusted_nodes();
    let last = grid.time_steps.saturating_sub(h_steps);
    (0..count)
        .map(|i| {
            let n = if count > 1 { i * last / (count - 1) } else { 0 };
            let node = trusted[(2 * i + 1) * trusted.len() / (2 * count)];
            (grid.time(n.min(last)), grid.coords(node))
        })
        .collect()
}

/// Dynamic-programming residual `|v(t, x) − opt G_{t,t+h}[v(t+h, X)]|` over
/// constant actions and at most one impulse at `t`. The optimization
/// follows the grid's ordering: `max_u min_α` for the lower value,
/// `min_α max_u` for the upper one. Ties go to the lowest action and to
/// intervening.
pub fn dpp_residual(
    spec: &ProblemSpec,
    vgrid: &ValueGrid,
    samples: &[(f64, Vec<f64>)],
    h: f64,
    mc: &McConfig,
) -> Result<Vec<DppOutcome>> {
    let eta = |y: &[f64], t: f64| vgrid.value_at(t, y);
    samples
        .par_iter()
        .map(|(t, x)| {
            let t = *t;
            if t + h > spec.horizon * (1.0 + 1e-12) {
                return Err(Error::Config(format!("t + h = {} beyond the horizon", t + h)));
            }
            let terminal = |y: &[f64]| Ok(eta(y, t + h));
            // impulses first, so ties resolve towards intervening as in PolicyGrid
            let mut controls: Vec<Option<usize>> = (0..spec.impulses.len()).map(Some).collect();
            controls.push(None);
            // est[a][u]
            let mut est = Vec::with_capacity(spec.actions.len());
            for a in 0..spec.actions.len() {
                let mut row = Vec::with_capacity(controls.len());
                for u in &controls {
                    let schedule = match u {
                        None => ImpulseSchedule::empty(),
                        Some(b) => ImpulseSchedule::from_pairs(spec, &[(t, *b)])?,
                    };
                    let pol = PolicyPair::schedule(schedule, a);
                    row.push(backward_semigroup(spec, t, h, &terminal, x, &pol, mc)?);
                }
                est.push(row);
            }
            let (a, u) = match vgrid.ordering {
                SchemeOrdering::Lower => {
                    let best_a = |u: usize| (0..est.len()).fold(0, |b, a| if est[a][u].value < est[b][u].value { a } else { b });
                    let u = (0..controls.len()).fold(0, |b, u| {
                        if est[best_a(u)][u].value > est[best_a(b)][b].value { u } else { b }
                    });
                    (best_a(u), u)
                }
                SchemeOrdering::Upper => {
                    let best_u = |a: usize| (0..controls.len()).fold(0, |b, u| if est[a][u].value > est[a][b].value { u } else { b });
                    let a = (0..est.len()).fold(0, |b, a| {
                        if est[a][best_u(a)].value < est[b][best_u(b)].value { a } else { b }
                    });
                    (a, best_u(a))
                }
            };
            let value = eta(x, t);
            let rhs = est[a][u].value;
            Ok(DppOutcome {
                t,
                x: x.clone(),
                value,
                rhs,
                residual: (value - rhs).abs(),
                stderr: est[a][u].stderr,
                action: a,
                impulse: controls[u],
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemigroupOutcome {
    pub lhs: f64,
    pub rhs: f64,
    pub difference: f64,
    pub stderr: f64,
    pub dt: f64,
}

/// Both sides of `G_{t,T}[ψ] = G_{t,t+h}[G_{t+h,T}[ψ]]`. `mc.n_steps`
/// spans `[t, T]` and `h` must be a whole number of steps. The first stage
/// shares the seed (and so its increments) with the left side; the inner
/// value is fitted on paths restarted from the first stage's endpoints with
/// a derived seed.
pub fn semigroup_residual(
    spec: &ProblemSpec,
    t: f64,
    x: &[f64],
    h: f64,
    policies: &PolicyPair,
    mc: &McConfig,
) -> Result<SemigroupOutcome> {
    mc.validate(spec.state_dim)?;
    let big_t = spec.horizon;
    let dt = (big_t - t) / mc.n_steps as f64;
    let steps1 = (h / dt).round() as usize;
    if (steps1 as f64 * dt - h).abs() > 1e-9 * big_t || steps1 > mc.n_steps {
        return Err(Error::Config(format!("split h = {h} is not a multiple of Δt = {dt} within the window")));
    }
    let psi = |y: &[f64]| spec.terminal(y);
    let lhs_bundle = simulate_window(spec, &mc.setup(t, big_t), Starts::Point(x), policies)?;
    let lhs = solve_bundle(spec, &lhs_bundle, &psi, mc.degree)?.estimate;
    if steps1 == 0 || steps1 == mc.n_steps {
        return Ok(SemigroupOutcome {
            lhs: lhs.value,
            rhs: lhs.value,
            difference: 0.0,
            stderr: lhs.stderr,
            dt,
        });
    }

    let mid = t + steps1 as f64 * dt;
    let mut setup1 = mc.setup(t, mid);
    setup1.n_steps = steps1;
    let stage1 = simulate_window(spec, &setup1, Starts::Point(x), policies)?;
    let starts = stage1.final_states();
    let mut setup2 = mc.setup(mid, big_t);
    setup2.n_steps = mc.n_steps - steps1;
    setup2.seed = derive_seed(mc.seed, 1);
    setup2.impulses_at_start = false;
    let stage2 = simulate_window(spec, &setup2, Starts::PerPath(&starts), policies)?;
    let inner = solve_bundle(spec, &stage2, &psi, mc.degree)?;
    let fit = inner.first_slice;
    let eta = |y: &[f64]| fit.eval(spec, y, policies.continuous.action(mid, y));
    let rhs = solve_bundle(spec, &stage1, &eta, mc.degree)?.estimate;
    Ok(SemigroupOutcome {
        lhs: lhs.value,
        rhs: rhs.value,
        difference: (lhs.value - rhs.value).abs(),
        stderr: (lhs.stderr.powi(2) + rhs.stderr.powi(2)).sqrt(),
        dt,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationOutcome {
    /// `g(k) = sup (V^∞ − V^k)` over trusted nodes and all slices.
    pub gaps: Vec<f64>,
    /// Smallest `V^∞ − V^k` seen (negative means some `V^k` overshoots).
    pub min_difference: f64,
    /// Largest `V^k − V^{k+1}` over all nodes and slices.
    pub monotone_violation: f64,
    /// Largest `g(k+1) − g(k)`.
    pub gap_increase: f64,
    /// `max_{k ≥ 1} g(k)·√k`.
    pub rate_constant: f64,
}

pub fn truncation_convergence(
    spec: &ProblemSpec,
    grid: &GridSpec,
    ordering: SchemeOrdering,
    k_max: usize,
    tol: f64,
) -> Result<TruncationOutcome> {
    if k_max == 0 {
        return Err(Error::Config("k_max must be at least 1".into()));
    }
    let family = solve_truncated_family(spec, grid, ordering, k_max)?;
    let full = solve_qvi(spec, grid, ordering, tol)?;
    let trusted = grid.trusted_nodes();
    let nodes = grid.node_count();
    let mut gaps = Vec::with_capacity(k_max + 1);
    let mut min_difference = f64::INFINITY;
    for v in &family {
        let mut g = f64::NEG_INFINITY;
        for n in 0..=grid.time_steps {
            for &k in &trusted {
                let d = full.values[n * nodes + k] - v.values[n * nodes + k];
                g = g.max(d);
                min_difference = min_difference.min(d);
            }
        }
        gaps.push(g);
    }
    let monotone_violation = family
        .windows(2)
        .flat_map(|w| w[0].values.iter().zip(&w[1].values).map(|(a, b)| a - b))
        .fold(f64::NEG_INFINITY, f64::max);
    let gap_increase = gaps.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let rate_constant = gaps
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, g)| g * (k as f64).sqrt())
        .fold(0.0, f64::max);
    Ok(TruncationOutcome {
        gaps,
        min_difference,
        monotone_violation,
        gap_increase,
        rate_constant,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountOutcome {
    pub mean: f64,
    pub stderr: f64,
    pub max: usize,
    pub counts: Vec<usize>,
    /// `(sup v − inf v)/δ + 1`.
    pub range_bound: f64,
}

/// Intervention counts of paths driven by the extracted feedback policies.
pub fn impulse_count_stats(
    spec: &ProblemSpec,
    vgrid: &ValueGrid,
    policy: &Arc<PolicyGrid>,
    t0: f64,
    x0: &[f64],
    mc: &McConfig,
) -> Result<CountOutcome> {
    let pair = policy.policy_pair();
    let bundle = simulate_paths(spec, t0, x0, &pair, mc.n_paths, mc.n_steps, mc.seed)?;
    let counts = bundle.impulse_counts();
    let as_f: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let m = crate::forward::mean_stderr(&as_f);
    let (lo, hi) = vgrid.range();
    Ok(CountOutcome {
        mean: m.estimate,
        stderr: m.stderr,
        max: counts.iter().copied().max().unwrap_or(0),
        counts,
        range_bound: (hi - lo) / spec.constants.delta_floor + 1.0,
    })
}

type ScalarFn = Box<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
type VectorFn = Box<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;

/// Test function `φ(t, x)` with optional analytic derivatives; missing ones
/// fall back to central differences.
pub struct SmoothFn {
    value: ScalarFn,
    time_derivative: Option<ScalarFn>,
    gradient: Option<VectorFn>,
    /// Row-major `n × n`.
    hessian: Option<VectorFn>,
}

impl SmoothFn {
    pub fn new(value: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        SmoothFn {
            value: Box::new(value),
            time_derivative: None,
            gradient: None,
            hessian: None,
        }
    }

    pub fn with_time_derivative(mut self, f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.time_derivative = Some(Box::new(f));
        self
    }

    pub fn with_gradient(mut self, f: impl Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.gradient = Some(Box::new(f));
        self
    }

    pub fn with_hessian(mut self, f: impl Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.hessian = Some(Box::new(f));
        self
    }

    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        (self.value)(t, x)
    }

    pub fn dt(&self, t: f64, x: &[f64]) -> f64 {
        match &self.time_derivative {
            Some(f) => f(t, x),
            None => {
                let e = 1e-5 * (1.0 + t.abs());
                (self.value(t + e, x) - self.value(t - e, x)) / (2.0 * e)
            }
        }
    }

    pub fn gradient(&self, t: f64, x: &[f64]) -> Vec<f64> {
        match &self.gradient {
            Some(f) => f(t, x),
            None => (0..x.len())
                .map(|i| {
                    let e = 1e-5 * (1.0 + x[i].abs());
                    let (mut p, mut m) = (x.to_vec(), x.to_vec());
                    p[i] += e;
                    m[i] -= e;
                    (self.value(t, &p) - self.value(t, &m)) / (2.0 * e)
                })
                .collect(),
        }
    }

    pub fn hessian(&self, t: f64, x: &[f64]) -> Vec<f64> {
        if let Some(f) = &self.hessian {
            return f(t, x);
        }
        let n = x.len();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let ei = 1e-3 * (1.0 + x[i].abs());
                let ej = 1e-3 * (1.0 + x[j].abs());
                let at = |si: f64, sj: f64| {
                    let mut y = x.to_vec();
                    y[i] += si * ei;
                    y[j] += sj * ej;
                    self.value(t, &y)
                };
                out[i * n + j] = (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * ei * ej);
            }
        }
        out
    }
}

/// `∂_t φ + ½ tr(σσᵀ D²φ) + Dφ·a + f(t, x, φ, (Dφ)ᵀσ, α)`.
pub fn driver_f(spec: &ProblemSpec, phi: &SmoothFn, t: f64, x: &[f64], action: usize) -> Result<f64> {
    let alpha = spec.action(action);
    let grad = phi.gradient(t, x);
    let hess = phi.hessian(t, x);
    let h = crate::model::hamiltonian(spec, t, x, phi.value(t, x), &grad, &hess, alpha)?;
    Ok(phi.dt(t, x) + h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorPoint {
    pub h: f64,
    pub residual: f64,
    pub stderr: f64,
}

/// `r(h) = |G_{t,t+h}[φ(t+h, X)] − φ(t, x) − h F(t, x)|` without impulses
/// under the constant action, for each `h` (same seed throughout).
pub fn generator_consistency(
    spec: &ProblemSpec,
    phi: &SmoothFn,
    t: f64,
    x: &[f64],
    action: usize,
    hs: &[f64],
    mc: &McConfig,
) -> Result<Vec<GeneratorPoint>> {
    let f = driver_f(spec, phi, t, x, action)?;
    let base = phi.value(t, x);
    let pol = PolicyPair::constant(action);
    hs.iter()
        .map(|&h| {
            let eta = |y: &[f64]| Ok(phi.value(t + h, y));
            let g = backward_semigroup(spec, t, h, &eta, x, &pol, mc)?;
            Ok(GeneratorPoint {
                h,
                residual: (g.value - base - h * f).abs(),
                stderr: g.stderr,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapOutcome {
    pub gap: f64,
    pub slice: usize,
    pub node: usize,
    pub t: f64,
    pub x: Vec<f64>,
    /// Smallest `upper − lower` on trusted nodes.
    pub min_difference: f64,
}

/// `sup |upper − lower|` over trusted nodes and all slices.
pub fn value_gap(upper: &ValueGrid, lower: &ValueGrid) -> Result<GapOutcome> {
    if upper.grid != lower.grid {
        return Err(Error::GridMismatch("value grids live on different meshes".into()));
    }
    if upper.ordering != SchemeOrdering::Upper || lower.ordering != SchemeOrdering::Lower {
        return Err(Error::GridMismatch("expected an upper and a lower value grid".into()));
    }
    let grid = &upper.grid;
    let nodes = grid.node_count();
    let mut out = GapOutcome {
        gap: 0.0,
        slice: 0,
        node: 0,
        t: 0.0,
        x: Vec::new(),
        min_difference: f64::INFINITY,
    };
    for n in 0..=grid.time_steps {
        for k in grid.trusted_nodes() {
            let d = upper.values[n * nodes + k] - lower.values[n * nodes + k];
            out.min_difference = out.min_difference.min(d);
            if d.abs() > out.gap {
                out.gap = d.abs();
                out.slice = n;
                out.node = k;
            }
        }
    }
    out.t = grid.time(out.slice);
    out.x = grid.coords(out.node);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonOutcome {
    pub replications: usize,
    /// Replications where the perturbed estimate is at least the base one.
    pub holds: usize,
    pub differences: Vec<f64>,
}

/// Coupled-seed estimates under `(f + shift, ψ + shift)` and `(f, ψ)`.
pub fn comparison_test(
    spec: &ProblemSpec,
    t0: f64,
    x0: &[f64],
    policies: &PolicyPair,
    mc: &McConfig,
    shift: f64,
    replications: usize,
) -> Result<ComparisonOutcome> {
    let hat = spec.with_driver_shift(shift).with_terminal_shift(shift);
    let differences = (0..replications)
        .map(|r| {
            let mc_r = McConfig {
                seed: derive_seed(mc.seed, r as u64 + 1),
                ..mc.clone()
            };
            let base = evaluate_cost(spec, t0, x0, policies, &mc_r)?;
            let up = evaluate_cost(&hat, t0, x0, policies, &mc_r)?;
            Ok(up.value - base.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ComparisonOutcome {
        replications,
        holds: differences.iter().filter(|&&d| d >= 0.0).count(),
        differences,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityOutcome {
    pub shifts: Vec<f64>,
    pub differences: Vec<f64>,
    /// Largest `|ΔY| / (‖Δψ‖ + ‖Δf‖)` with the L² norms of constant shifts.
    pub ratio: f64,
}

pub fn stability_test(
    spec: &ProblemSpec,
    t0: f64,
    x0: &[f64],
    policies: &PolicyPair,
    mc: &McConfig,
    shifts: &[f64],
) -> Result<StabilityOutcome> {
    let base = evaluate_cost(spec, t0, x0, policies, mc)?.value;
    let span = spec.horizon - t0;
    let mut differences = Vec::with_capacity(shifts.len());
    let mut ratio = 0.0f64;
    for &s in shifts {
        let hat = spec.with_driver_shift(s).with_terminal_shift(s);
        let d = (evaluate_cost(&hat, t0, x0, policies, mc)?.value - base).abs();
        ratio = ratio.max(d / (s.abs() * (1.0 + span.sqrt())));
        differences.push(d);
    }
    Ok(StabilityOutcome {
        shifts: shifts.to_vec(),
        differences,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::catalog;
    use crate::model::problem::{Constants, Sources};

    fn simple(drift: &str, sigma: &str, driver: &str, psi: &str) -> ProblemSpec {
        ProblemSpec::from_sources(&Sources {
            horizon: 1.0,
            state_dim: 1,
            noise_dim: 1,
            drift: vec![drift.into()],
            diffusion: vec![sigma.into()],
            driver: driver.into(),
            terminal: psi.into(),
            cost: "1".into(),
            impulse_map: vec!["x".into()],
            actions: vec![vec![0.0]],
            impulses: vec![vec![0.0]],
            constants: Constants::default(),
        })
        .unwrap()
    }

    #[test]
    fn dpp_is_exact_at_zero_step() {
        let s = catalog::reset_game(0.1, 0.5);
        let g = GridSpec::new(&s, vec![-2.0], vec![2.0], vec![41], None, None).unwrap();
        let v = solve_qvi(&s, &g, SchemeOrdering::Lower, 1e-12).unwrap();
        let pts = dpp_sample_points(&g, 5, 0);
        let out = dpp_residual(&s, &v, &pts, 0.0, &McConfig::new(16, 2, 0)).unwrap();
        assert!(out.iter().all(|o| o.residual == 0.0));
    }

    #[test]
    fn semigroup_degenerate_splits() {
        let s = simple("0", "1", "0", "x^2");
        let mc = McConfig::new(200, 10, 3);
        let pol = PolicyPair::constant(0);
        for h in [0.0, 1.0] {
            assert_eq!(semigroup_residual(&s, 0.0, &[0.5], h, &pol, &mc).unwrap().difference, 0.0);
        }
        assert!(semigroup_residual(&s, 0.0, &[0.5], 0.33, &pol, &mc).is_err());
    }

    #[test]
    fn generator_examples() {
        let pol_mc = McConfig::new(64, 4, 1).with_antithetic(true);
        let s = simple("0", "0.3", "0", "x");
        let c = SmoothFn::new(|_, _| 2.0);
        for p in generator_consistency(&s, &c, 0.1, &[0.4], 0, &[0.1, 0.01], &pol_mc).unwrap() {
            assert_eq!(p.residual, 0.0);
        }
        let s = simple("1", "0", "0", "x");
        let lin = SmoothFn::new(|_, x: &[f64]| x[0]);
        for p in generator_consistency(&s, &lin, 0.0, &[0.4], 0, &[0.1, 0.01], &pol_mc).unwrap() {
            assert!(p.residual < 1e-12, "{p:?}");
        }
    }

    #[test]
    fn finite_difference_fallback() {
        let phi = SmoothFn::new(|t, x: &[f64]| x[0] * x[0] * x[1] + 3.0 * t);
        let g = phi.gradient(0.0, &[1.0, 2.0]);
        assert!((g[0] - 4.0).abs() < 1e-6 && (g[1] - 1.0).abs() < 1e-6);
        let h = phi.hessian(0.0, &[1.0, 2.0]);
        for (a, b) in h.iter().zip([4.0, 2.0, 2.0, 0.0]) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!((phi.dt(0.5, &[1.0, 1.0]) - 3.0).abs() < 1e-8);
    }

    #[test]
    fn value_gap_checks_tags() {
        let s = catalog::heat(0.5);
        let g = GridSpec::new(&s, vec![-2.0], vec![2.0], vec![21], None, None).unwrap();
        let lo = solve_qvi(&s, &g, SchemeOrdering::Lower, 1e-12).unwrap();
        let up = solve_qvi(&s, &g, SchemeOrdering::Upper, 1e-12).unwrap();
        let gap = value_gap(&up, &lo).unwrap();
        assert_eq!(gap.gap, 0.0);
        assert!(value_gap(&lo, &lo).is_err());
        let g2 = GridSpec::new(&s, vec![-2.0], vec![2.0], vec![41], None, None).unwrap();
        let up2 = solve_qvi(&s, &g2, SchemeOrdering::Upper, 1e-12).unwrap();
        assert!(matches!(value_gap(&up2, &lo), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn prohibitive_cost_never_truncates() {
        let s = catalog::heat(0.5);
        let g = GridSpec::new(&s, vec![-2.0], vec![2.0], vec![21], None, None).unwrap();
        let out = truncation_convergence(&s, &g, SchemeOrdering::Lower, 3, 1e-12).unwrap();
        assert!(out.gaps.iter().all(|&g| g == 0.0));
        assert_eq!(out.rate_constant, 0.0);
    }
}
