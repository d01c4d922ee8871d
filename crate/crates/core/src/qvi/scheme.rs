//! Explicit monotone discretization of `−v_t − inf_α H = 0`.
//!
//! At each node the generator is written as `Σ w_k (v_k − v)` with
//! nonnegative weights: upwind differences for the drift, central second
//! differences for the diagonal of `σσᵀ`, and the seven-point splitting for
//! the off-diagonal entries (the diagonal pair of neighbours matching the
//! sign of the entry). On a boundary face the outward drift and every
//! second-order term involving that coordinate are dropped.

use rayon::prelude::*;

use super::grid::GridSpec;
use crate::error::{Error, Result};
use crate::model::ProblemSpec;

/// Tolerated negative weight, relative to the node's total rate.
const DOMINANCE_SLACK: f64 = 1e-12;

struct Workspace {
    drift: Vec<f64>,
    sigma: Vec<f64>,
    cov: Vec<f64>,
    weights: Vec<(usize, f64)>,
}

impl Workspace {
    fn new(n: usize, d: usize) -> Self {
        Workspace {
            drift: vec![0.0; n],
            sigma: vec![0.0; n * d],
            cov: vec![0.0; n * n],
            weights: Vec::with_capacity(2 * n * n),
        }
    }
}

fn add(weights: &mut Vec<(usize, f64)>, node: usize, w: f64) {
    match weights.iter_mut().find(|(k, _)| *k == node) {
        Some(entry) => entry.1 += w,
        None => weights.push((node, w)),
    }
}

/// Fill `ws.weights` for one node and action; returns the total rate `Σ w_k`.
fn assemble(spec: &ProblemSpec, grid: &GridSpec, t: f64, node: usize, idx: &[usize], x: &[f64], alpha: &[f64], ws: &mut Workspace) -> Result<f64> {
    let n = spec.state_dim;
    let d = spec.noise_dim;
    spec.drift_into(t, x, alpha, &mut ws.drift)?;
    spec.diffusion_into(t, x, alpha, &mut ws.sigma)?;
    for i in 0..n {
        for j in 0..n {
            ws.cov[i * n + j] = (0..d).map(|k| ws.sigma[i * d + k] * ws.sigma[j * d + k]).sum();
        }
    }
    ws.weights.clear();
    let mut rate = 0.0;
    let at_lo = |i: usize| idx[i] == 0;
    let at_hi = |i: usize| idx[i] + 1 == grid.nodes[i];
    let face = |i: usize| at_lo(i) || at_hi(i);

    for i in 0..n {
        let h = grid.dx(i);
        let s = grid.stride(i);
        let a = ws.drift[i];
        if a > 0.0 && !at_hi(i) {
            add(&mut ws.weights, node + s, a / h);
            rate += a / h;
        } else if a < 0.0 && !at_lo(i) {
            add(&mut ws.weights, node - s, -a / h);
            rate -= a / h;
        }
        if !face(i) {
            let w = 0.5 * ws.cov[i * n + i] / (h * h);
            add(&mut ws.weights, node + s, w);
            add(&mut ws.weights, node - s, w);
            rate += 2.0 * w;
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let c = ws.cov[i * n + j];
            if c == 0.0 || face(i) || face(j) {
                continue;
            }
            let (si, sj) = (grid.stride(i), grid.stride(j));
            let w = c.abs() / (2.0 * grid.dx(i) * grid.dx(j));
            if c > 0.0 {
                add(&mut ws.weights, node + si + sj, w);
                add(&mut ws.weights, node - si - sj, w);
            } else {
                add(&mut ws.weights, node + si - sj, w);
                add(&mut ws.weights, node - si + sj, w);
            }
            for nb in [node + si, node - si, node + sj, node - sj] {
                add(&mut ws.weights, nb, -w);
            }
            rate -= 2.0 * w;
        }
    }
    Ok(rate)
}

fn sample_times(spec: &ProblemSpec) -> impl Iterator<Item = f64> + '_ {
    (0..=8).map(move |k| spec.horizon * k as f64 / 8.0)
}

/// Largest `Δt` keeping every stencil weight of the update nonnegative,
/// sampled over all nodes, actions and nine times in `[0, T]`. `+∞` when
/// the generator and the driver's Lipschitz constant both vanish.
pub fn cfl_check(spec: &ProblemSpec, grid: &GridSpec) -> Result<f64> {
    let kf = spec.constants.lipschitz_kf;
    let rates: Vec<Result<f64>> = (0..grid.node_count())
        .into_par_iter()
        .map(|node| {
            let mut ws = Workspace::new(spec.state_dim, spec.noise_dim);
            let idx = grid.multi_index(node);
            let x = grid.coords(node);
            let mut worst = 0.0f64;
            for t in sample_times(spec) {
                for alpha in &spec.actions {
                    worst = worst.max(assemble(spec, grid, t, node, &idx, &x, alpha, &mut ws)?);
                }
            }
            Ok(worst)
        })
        .collect();
    let mut worst = 0.0f64;
    for r in rates {
        worst = worst.max(r?);
    }
    let denom = worst + kf;
    Ok(if denom > 0.0 { 1.0 / denom } else { f64::INFINITY })
}

/// Largest drift norm and diffusion Frobenius norm over the same samples as [`cfl_check`].
pub fn coefficient_bounds(spec: &ProblemSpec, grid: &GridSpec) -> Result<(f64, f64)> {
    let n = spec.state_dim;
    let mut a = vec![0.0; n];
    let mut s = vec![0.0; n * spec.noise_dim];
    let (mut a_max, mut s_max) = (0.0f64, 0.0f64);
    for node in 0..grid.node_count() {
        let x = grid.coords(node);
        for t in sample_times(spec) {
            for alpha in &spec.actions {
                spec.drift_into(t, &x, alpha, &mut a)?;
                spec.diffusion_into(t, &x, alpha, &mut s)?;
                a_max = a_max.max(a.iter().map(|v| v * v).sum::<f64>().sqrt());
                s_max = s_max.max(s.iter().map(|v| v * v).sum::<f64>().sqrt());
            }
        }
    }
    Ok((a_max, s_max))
}

fn gradient(grid: &GridSpec, next: &[f64], node: usize, idx: &[usize], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let s = grid.stride(i);
        let h = grid.dx(i);
        *o = if idx[i] == 0 {
            (next[node + s] - next[node]) / h
        } else if idx[i] + 1 == grid.nodes[i] {
            (next[node] - next[node - s]) / h
        } else {
            (next[node + s] - next[node - s]) / (2.0 * h)
        };
    }
}

/// One explicit step per action: `cands[a][node]` is the value at slice
/// `slice` obtained from `next` (slice `slice + 1`) under action `a`.
pub fn action_candidates(spec: &ProblemSpec, grid: &GridSpec, next: &[f64], slice: usize) -> Result<Vec<Vec<f64>>> {
    let n = spec.state_dim;
    let d = spec.noise_dim;
    let t = grid.time(slice);
    let dt = grid.dt();
    let kf = spec.constants.lipschitz_kf;
    let with_z = spec.driver_depends_on_z();
    let per_node: Vec<Result<Vec<f64>>> = (0..grid.node_count())
        .into_par_iter()
        .map(|node| {
            let mut ws = Workspace::new(n, d);
            let idx = grid.multi_index(node);
            let x = grid.coords(node);
            let v = next[node];
            let mut grad = vec![0.0; n];
            let mut z = vec![0.0; d];
            if with_z {
                gradient(grid, next, node, &idx, &mut grad);
            }
            let mut out = Vec::with_capacity(spec.actions.len());
            for (a, alpha) in spec.actions.iter().enumerate() {
                let rate = assemble(spec, grid, t, node, &idx, &x, alpha, &mut ws)?;
                if ws.weights.iter().any(|&(_, w)| w < -DOMINANCE_SLACK * rate.max(1.0)) {
                    return Err(Error::DiagonalDominance { node, action: a });
                }
                if dt * (rate + kf) > 1.0 + 1e-9 {
                    return Err(Error::Cfl {
                        dt,
                        max_dt: 1.0 / (rate + kf),
                    });
                }
                if with_z {
                    for (k, zk) in z.iter_mut().enumerate() {
                        *zk = (0..n).map(|i| grad[i] * ws.sigma[i * d + k]).sum();
                    }
                }
                let gen: f64 = ws.weights.iter().map(|&(k, w)| w * (next[k] - v)).sum();
                let f = spec.driver(t, &x, v, &z, alpha)?;
                let cand = v + dt * (gen + f);
                if !cand.is_finite() {
                    return Err(Error::NonFinite(format!("continuation value at node {node}, slice {slice}")));
                }
                out.push(cand);
            }
            Ok(out)
        })
        .collect();
    let mut cands = vec![Vec::with_capacity(grid.node_count()); spec.actions.len()];
    for r in per_node {
        for (a, v) in r?.into_iter().enumerate() {
            cands[a].push(v);
        }
    }
    Ok(cands)
}

/// Pointwise minimum over actions, with the lowest minimizing index.
pub fn min_over_actions(cands: &[Vec<f64>]) -> (Vec<f64>, Vec<usize>) {
    let nodes = cands[0].len();
    let mut vals = cands[0].clone();
    let mut arg = vec![0usize; nodes];
    for (a, c) in cands.iter().enumerate().skip(1) {
        for k in 0..nodes {
            if c[k] < vals[k] {
                vals[k] = c[k];
                arg[k] = a;
            }
        }
    }
    (vals, arg)
}

/// Continuation slice at `slice` from `next`: the minimum over actions of
/// the explicit update.
pub fn hjb_step(spec: &ProblemSpec, grid: &GridSpec, next: &[f64], slice: usize) -> Result<Vec<f64>> {
    Ok(min_over_actions(&action_candidates(spec, grid, next, slice)?).0)
}
