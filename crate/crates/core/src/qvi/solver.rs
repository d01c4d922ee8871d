use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::GridSpec;
use super::scheme::{action_candidates, cfl_check, min_over_actions};
use crate::error::{Error, Result};
use crate::forward::{ActionRule, ContinuousPolicy, ImpulsePolicy, ImpulseRule, PolicyPair};
use crate::model::ProblemSpec;

/// Where the obstacle sits relative to the minimization over actions.
///
/// `Lower` (hamiltonian-first): minimize the explicit update over actions,
/// then solve `v = max(C, Mv)`. `Upper` (obstacle-first): for each action
/// solve `W_α = max(C_α, M W_α)`, then take the minimum over actions. The
/// two agree when the action set is a singleton or the obstacle never binds,
/// and `Upper ≥ Lower` nodewise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeOrdering {
    Upper,
    Lower,
}

impl SchemeOrdering {
    pub fn name(self) -> &'static str {
        match self {
            SchemeOrdering::Upper => "upper",
            SchemeOrdering::Lower => "lower",
        }
    }
}

impl std::str::FromStr for SchemeOrdering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upper" | "obstacle-first" => Ok(SchemeOrdering::Upper),
            "lower" | "hamiltonian-first" => Ok(SchemeOrdering::Lower),
            other => Err(Error::Config(format!("unknown ordering `{other}`"))),
        }
    }
}

/// Values on every time slice, `(time_steps + 1) × nodes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueGrid {
    pub grid: GridSpec,
    pub ordering: SchemeOrdering,
    /// Impulse budget; `None` for the untruncated problem.
    pub level: Option<usize>,
    pub values: Vec<f64>,
}

impl ValueGrid {
    pub fn slice(&self, n: usize) -> &[f64] {
        let m = self.grid.node_count();
        &self.values[n * m..(n + 1) * m]
    }

    pub fn value(&self, n: usize, node: usize) -> f64 {
        self.values[n * self.grid.node_count() + node]
    }

    /// Multilinear interpolation in space at slice `n`.
    pub fn interpolate(&self, n: usize, x: &[f64]) -> f64 {
        self.grid.interpolate(self.slice(n), x)
    }

    /// Interpolation in space and linearly in time; exact slices at mesh times.
    pub fn value_at(&self, t: f64, x: &[f64]) -> f64 {
        let s = (t / self.grid.dt()).clamp(0.0, self.grid.time_steps as f64);
        let r = s.round();
        if (s - r).abs() < 1e-9 {
            return self.interpolate(r as usize, x);
        }
        let n = s.floor() as usize;
        let w = s - n as f64;
        (1.0 - w) * self.interpolate(n, x) + w * self.interpolate(n + 1, x)
    }

    pub fn range(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Continuation,
    Intervention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyGrid {
    pub grid: GridSpec,
    pub ordering: SchemeOrdering,
    pub tol: f64,
    pub region: Vec<Region>,
    /// Minimizing action index (continuation step).
    pub action: Vec<usize>,
    /// Maximizing impulse index, meaningful in the intervention region.
    pub impulse: Vec<usize>,
}

impl PolicyGrid {
    pub fn at(&self, n: usize, node: usize) -> (Region, usize, usize) {
        let k = n * self.grid.node_count() + node;
        (self.region[k], self.action[k], self.impulse[k])
    }

    /// Feedback policies reading the nearest slice and node.
    pub fn policy_pair(self: &Arc<Self>) -> PolicyPair {
        let g = Arc::clone(self);
        let impulse: ImpulseRule = Arc::new(move |t, x| {
            let (r, _, b) = g.at(g.grid.nearest_slice(t), g.grid.nearest(x));
            (r == Region::Intervention).then_some(b)
        });
        let g = Arc::clone(self);
        let action: ActionRule = Arc::new(move |t, x| g.at(g.grid.nearest_slice(t), g.grid.nearest(x)).1);
        PolicyPair::new(ImpulsePolicy::Feedback(impulse), ContinuousPolicy::Feedback(action))
    }

    pub fn intervention_nodes(&self, n: usize) -> Vec<usize> {
        (0..self.grid.node_count())
            .filter(|&k| self.at(n, k).0 == Region::Intervention)
            .collect()
    }
}

/// Interpolation stencils and costs of every impulse at one time slice.
pub struct ImpulseTable {
    corners: usize,
    q: usize,
    idx: Vec<usize>,
    w: Vec<f64>,
    cost: Vec<f64>,
}

impl ImpulseTable {
    pub fn new(spec: &ProblemSpec, grid: &GridSpec, t: f64) -> Result<Self> {
        let corners = 1usize << grid.dim();
        let q = spec.impulses.len();
        let rows: Vec<Result<(Vec<usize>, Vec<f64>, Vec<f64>)>> = (0..grid.node_count())
            .into_par_iter()
            .map(|node| {
                let x = grid.coords(node);
                let mut dest = vec![0.0; spec.state_dim];
                let (mut idx, mut w, mut cost) = (Vec::new(), Vec::new(), Vec::new());
                for b in &spec.impulses {
                    spec.impulse_into(t, &x, b, &mut dest)?;
                    let (i, ww) = grid.stencil(&dest);
                    idx.extend(i);
                    w.extend(ww);
                    cost.push(spec.cost(t, &x, b)?);
                }
                Ok((idx, w, cost))
            })
            .collect();
        let mut table = ImpulseTable {
            corners,
            q,
            idx: Vec::with_capacity(grid.node_count() * q * corners),
            w: Vec::with_capacity(grid.node_count() * q * corners),
            cost: Vec::with_capacity(grid.node_count() * q),
        };
        for r in rows {
            let (i, w, c) = r?;
            table.idx.extend(i);
            table.w.extend(w);
            table.cost.extend(c);
        }
        Ok(table)
    }

    /// `Mv` at every node and the lowest maximizing impulse index.
    pub fn apply(&self, v: &[f64]) -> (Vec<f64>, Vec<usize>) {
        let nodes = v.len();
        let mut out = vec![f64::NEG_INFINITY; nodes];
        let mut arg = vec![0usize; nodes];
        for node in 0..nodes {
            for b in 0..self.q {
                let row = node * self.q + b;
                let base = row * self.corners;
                let val: f64 = (base..base + self.corners).map(|k| self.w[k] * v[self.idx[k]]).sum::<f64>()
                    - self.cost[row];
                if val > out[node] {
                    out[node] = val;
                    arg[node] = b;
                }
            }
        }
        (out, arg)
    }
}

/// `Mv(t, x) = max_b v(Γ(t, x, b)) − ℓ(t, x, b)` with multilinear interpolation.
pub fn intervention_operator(spec: &ProblemSpec, grid: &GridSpec, slice: &[f64], t: f64) -> Result<Vec<f64>> {
    Ok(ImpulseTable::new(spec, grid, t)?.apply(slice).0)
}

/// Solve `v = max(c, Mv)` by iteration from `v = c`.
fn obstacle_fixed_point(spec: &ProblemSpec, table: &ImpulseTable, c: &[f64], tol: f64, slice: usize) -> Result<Vec<f64>> {
    let (lo, hi) = c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let cap = ((hi - lo) / spec.constants.delta_floor).ceil() as usize + 1;
    let mut v = c.to_vec();
    let mut last = (0usize, f64::INFINITY);
    for _ in 0..cap {
        let (mv, _) = table.apply(&v);
        let mut worst = (0usize, 0.0f64);
        for k in 0..v.len() {
            let new = c[k].max(mv[k]);
            let change = (new - v[k]).abs();
            if change > worst.1 {
                worst = (k, change);
            }
            v[k] = new;
        }
        if worst.1 <= tol {
            return Ok(v);
        }
        last = worst;
    }
    Err(Error::NonConvergence {
        slice,
        iterations: cap,
        node: last.0,
        change: last.1,
    })
}

fn terminal_slice(spec: &ProblemSpec, grid: &GridSpec) -> Result<Vec<f64>> {
    (0..grid.node_count())
        .map(|k| spec.terminal(&grid.coords(k)))
        .collect()
}

fn check_grid(spec: &ProblemSpec, grid: &GridSpec) -> Result<()> {
    if grid.dim() != spec.state_dim {
        return Err(Error::Dimension(format!(
            "grid has {} dimensions, problem has {}",
            grid.dim(),
            spec.state_dim
        )));
    }
    let max_dt = cfl_check(spec, grid)?;
    if grid.dt() > max_dt * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt: grid.dt(), max_dt });
    }
    Ok(())
}

/// Backward induction for the full obstacle problem.
pub fn solve_qvi(spec: &ProblemSpec, grid: &GridSpec, ordering: SchemeOrdering, tol: f64) -> Result<ValueGrid> {
    check_grid(spec, grid)?;
    let m = grid.time_steps;
    let nodes = grid.node_count();
    let mut values = vec![0.0; (m + 1) * nodes];
    values[m * nodes..].copy_from_slice(&terminal_slice(spec, grid)?);
    for n in (0..m).rev() {
        let (head, tail) = values.split_at_mut((n + 1) * nodes);
        let next = &tail[..nodes];
        let cands = action_candidates(spec, grid, next, n)?;
        let table = ImpulseTable::new(spec, grid, grid.time(n))?;
        let slice = match ordering {
            SchemeOrdering::Lower => obstacle_fixed_point(spec, &table, &min_over_actions(&cands).0, tol, n)?,
            SchemeOrdering::Upper => {
                let per_action = cands
                    .iter()
                    .map(|c| obstacle_fixed_point(spec, &table, c, tol, n))
                    .collect::<Result<Vec<_>>>()?;
                min_over_actions(&per_action).0
            }
        };
        head[n * nodes..].copy_from_slice(&slice);
    }
    Ok(ValueGrid {
        grid: grid.clone(),
        ordering,
        level: None,
        values,
    })
}

/// `V^0, …, V^k`: `V^0` never intervenes, and an impulse moves from budget
/// `j` to `j − 1` at the same time slice.
pub fn solve_truncated_family(spec: &ProblemSpec, grid: &GridSpec, ordering: SchemeOrdering, k: usize) -> Result<Vec<ValueGrid>> {
    check_grid(spec, grid)?;
    let m = grid.time_steps;
    let nodes = grid.node_count();
    let psi = terminal_slice(spec, grid)?;
    let mut family: Vec<Vec<f64>> = (0..=k)
        .map(|_| {
            let mut v = vec![0.0; (m + 1) * nodes];
            v[m * nodes..].copy_from_slice(&psi);
            v
        })
        .collect();
    for n in (0..m).rev() {
        let table = ImpulseTable::new(spec, grid, grid.time(n))?;
        let cands: Vec<Vec<Vec<f64>>> = family
            .iter()
            .map(|v| action_candidates(spec, grid, &v[(n + 1) * nodes..(n + 2) * nodes], n))
            .collect::<Result<_>>()?;
        match ordering {
            SchemeOrdering::Lower => {
                let mut below: Option<Vec<f64>> = None;
                for (j, c) in cands.iter().enumerate() {
                    let mut slice = min_over_actions(c).0;
                    if let Some(prev) = &below {
                        let (mv, _) = table.apply(prev);
                        for (s, b) in slice.iter_mut().zip(mv) {
                            *s = s.max(b);
                        }
                    }
                    family[j][n * nodes..(n + 1) * nodes].copy_from_slice(&slice);
                    below = Some(slice);
                }
            }
            SchemeOrdering::Upper => {
                let mut below: Option<Vec<Vec<f64>>> = None;
                for (j, c) in cands.iter().enumerate() {
                    let w: Vec<Vec<f64>> = match &below {
                        None => c.clone(),
                        Some(prev) => c
                            .iter()
                            .zip(prev)
                            .map(|(ca, pa)| {
                                let (mv, _) = table.apply(pa);
                                ca.iter().zip(mv).map(|(a, b)| a.max(b)).collect()
                            })
                            .collect(),
                    };
                    family[j][n * nodes..(n + 1) * nodes].copy_from_slice(&min_over_actions(&w).0);
                    below = Some(w);
                }
            }
        }
    }
    Ok(family
        .into_iter()
        .enumerate()
        .map(|(j, values)| ValueGrid {
            grid: grid.clone(),
            ordering,
            level: Some(j),
            values,
        })
        .collect())
}

/// `V^k` alone.
pub fn solve_truncated(spec: &ProblemSpec, grid: &GridSpec, ordering: SchemeOrdering, k: usize) -> Result<ValueGrid> {
    Ok(solve_truncated_family(spec, grid, ordering, k)?.pop().expect("k + 1 levels"))
}

/// Intervene where `v − Mv ≤ tol` (lowest maximizing impulse); elsewhere
/// record the lowest minimizing action of the continuation step. The last
/// slice is all continuation.
pub fn extract_policies(spec: &ProblemSpec, vgrid: &ValueGrid, tol: f64) -> Result<PolicyGrid> {
    let grid = &vgrid.grid;
    let m = grid.time_steps;
    let nodes = grid.node_count();
    let total = (m + 1) * nodes;
    let mut pol = PolicyGrid {
        grid: grid.clone(),
        ordering: vgrid.ordering,
        tol,
        region: vec![Region::Continuation; total],
        action: vec![0; total],
        impulse: vec![0; total],
    };
    for n in 0..m {
        let v = vgrid.slice(n);
        let (_, actions) = min_over_actions(&action_candidates(spec, grid, vgrid.slice(n + 1), n)?);
        let (mv, impulses) = ImpulseTable::new(spec, grid, grid.time(n))?.apply(v);
        for k in 0..nodes {
            let at = n * nodes + k;
            pol.action[at] = actions[k];
            pol.impulse[at] = impulses[k];
            if v[k] - mv[k] <= tol {
                pol.region[at] = Region::Intervention;
            }
        }
    }
    Ok(pol)
}
