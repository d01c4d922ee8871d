use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProblemSpec;

/// Time steps used when the scheme has no stability restriction.
pub const DEFAULT_TIME_STEPS: usize = 100;

/// Rectangular space-time mesh. Node `k` has multi-index with dimension 0
/// varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub nodes: Vec<usize>,
    pub time_steps: usize,
    pub horizon: f64,
    /// Nodes next to each face whose values are not trusted.
    pub margin: usize,
}

impl GridSpec {
    /// Build a grid for `spec`. Without `time_steps` the largest stable step
    /// is used; without `margin` the untrusted band covers three standard
    /// deviations of diffusion plus the largest drift excursion.
    pub fn new(
        spec: &ProblemSpec,
        lo: Vec<f64>,
        hi: Vec<f64>,
        nodes: Vec<usize>,
        time_steps: Option<usize>,
        margin: Option<usize>,
    ) -> Result<GridSpec> {
        let n = spec.state_dim;
        if lo.len() != n || hi.len() != n || nodes.len() != n {
            return Err(Error::Dimension(format!(
                "grid needs {n} entries for lo, hi and nodes"
            )));
        }
        for i in 0..n {
            if nodes[i] < 3 {
                return Err(Error::Config("at least 3 nodes per dimension".into()));
            }
            if !(lo[i] < hi[i]) {
                return Err(Error::Config(format!("empty box side [{}, {}]", lo[i], hi[i])));
            }
            let k = spec.constants.k_gamma;
            if lo[i] > -k || hi[i] < k {
                return Err(Error::Config(format!(
                    "box side [{}, {}] does not contain [-K_Γ, K_Γ] = [{}, {k}]",
                    lo[i], hi[i], -k
                )));
            }
        }
        let mut grid = GridSpec {
            lo,
            hi,
            nodes,
            time_steps: time_steps.unwrap_or(1).max(1),
            horizon: spec.horizon,
            margin: 0,
        };
        if time_steps.is_none() {
            let max_dt = super::scheme::cfl_check(spec, &grid)?;
            grid.time_steps = if max_dt.is_finite() {
                let mut m = (spec.horizon / max_dt).ceil().max(1.0) as usize;
                while spec.horizon / m as f64 > max_dt {
                    m += 1;
                }
                m
            } else {
                DEFAULT_TIME_STEPS
            };
        }
        grid.margin = match margin {
            Some(m) => m,
            None => {
                let (a_max, s_max) = super::scheme::coefficient_bounds(spec, &grid)?;
                let reach = 3.0 * s_max * spec.horizon.sqrt() + a_max * spec.horizon;
                (0..n)
                    .map(|i| (reach / grid.dx(i)).ceil() as usize)
                    .max()
                    .unwrap_or(0)
            }
        };
        if (0..n).any(|i| 2 * grid.margin >= grid.nodes[i]) {
            return Err(Error::Config(format!(
                "margin of {} nodes leaves no trusted nodes",
                grid.margin
            )));
        }
        Ok(grid)
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn dx(&self, i: usize) -> f64 {
        (self.hi[i] - self.lo[i]) / (self.nodes[i] - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.time_steps as f64
    }

    pub fn time(&self, slice: usize) -> f64 {
        if slice == self.time_steps {
            self.horizon
        } else {
            slice as f64 * self.dt()
        }
    }

    pub fn stride(&self, i: usize) -> usize {
        self.nodes[..i].iter().product()
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        let mut rest = node;
        self.nodes
            .iter()
            .map(|&m| {
                let k = rest % m;
                rest /= m;
                k
            })
            .collect()
    }

    pub fn coords(&self, node: usize) -> Vec<f64> {
        self.multi_index(node)
            .iter()
            .enumerate()
            .map(|(i, &k)| self.lo[i] + k as f64 * self.dx(i))
            .collect()
    }

    pub fn is_trusted(&self, node: usize) -> bool {
        self.multi_index(node)
            .iter()
            .zip(&self.nodes)
            .all(|(&k, &m)| k >= self.margin && k + self.margin < m)
    }

    pub fn trusted_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&k| self.is_trusted(k)).collect()
    }

    /// Nearest node to `x`, clamped to the box.
    pub fn nearest(&self, x: &[f64]) -> usize {
        (0..self.dim())
            .map(|i| {
                let s = ((x[i] - self.lo[i]) / self.dx(i)).round();
                s.clamp(0.0, (self.nodes[i] - 1) as f64) as usize * self.stride(i)
            })
            .sum()
    }

    /// Nearest time slice to `t`.
    pub fn nearest_slice(&self, t: f64) -> usize {
        ((t / self.dt()).round().max(0.0) as usize).min(self.time_steps)
    }

    /// Corner nodes and nonnegative weights of the multilinear interpolant
    /// at `x` (clamped to the box). Exact on affine functions.
    pub fn stencil(&self, x: &[f64]) -> (Vec<usize>, Vec<f64>) {
        let n = self.dim();
        let mut base = 0usize;
        let mut frac = vec![0.0; n];
        for i in 0..n {
            let s = ((x[i] - self.lo[i]) / self.dx(i)).clamp(0.0, (self.nodes[i] - 1) as f64);
            let k = (s.floor() as usize).min(self.nodes[i] - 2);
            frac[i] = s - k as f64;
            base += k * self.stride(i);
        }
        let corners = 1usize << n;
        let mut idx = Vec::with_capacity(corners);
        let mut w = Vec::with_capacity(corners);
        for c in 0..corners {
            let mut node = base;
            let mut weight = 1.0;
            for (i, f) in frac.iter().enumerate() {
                if c >> i & 1 == 1 {
                    node += self.stride(i);
                    weight *= f;
                } else {
                    weight *= 1.0 - f;
                }
            }
            idx.push(node);
            w.push(weight);
        }
        (idx, w)
    }

    pub fn interpolate(&self, slice: &[f64], x: &[f64]) -> f64 {
        let (idx, w) = self.stencil(x);
        idx.iter().zip(&w).map(|(&k, &w)| w * slice[k]).sum()
    }

    /// Same grid with every spacing halved, four times the time steps (so a
    /// stable step stays stable) and the margin doubled.
    pub fn refined(&self) -> GridSpec {
        GridSpec {
            nodes: self.nodes.iter().map(|m| 2 * m - 1).collect(),
            time_steps: 4 * self.time_steps,
            margin: 2 * self.margin,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::catalog;

    fn grid2() -> GridSpec {
        GridSpec {
            lo: vec![-1.0, 0.0],
            hi: vec![1.0, 2.0],
            nodes: vec![5, 3],
            time_steps: 4,
            horizon: 1.0,
            margin: 1,
        }
    }

    #[test]
    fn indexing() {
        let g = grid2();
        assert_eq!(g.node_count(), 15);
        assert_eq!(g.multi_index(7), vec![2, 1]);
        assert_eq!(g.coords(7), vec![0.0, 1.0]);
        assert_eq!(g.nearest(&[0.1, 0.9]), 7);
        assert_eq!(g.nearest(&[9.0, 9.0]), 14);
        assert_eq!(g.trusted_nodes(), vec![6, 7, 8]);
        assert_eq!(g.nearest_slice(0.26), 1);
    }

    #[test]
    fn interpolation_is_exact_on_affine() {
        let g = grid2();
        let f = |x: &[f64]| 1.0 + 2.0 * x[0] - 0.5 * x[1];
        let slice: Vec<f64> = (0..g.node_count()).map(|k| f(&g.coords(k))).collect();
        for x in [[0.13, 1.7], [-0.99, 0.01], [1.0, 2.0]] {
            assert!((g.interpolate(&slice, &x) - f(&x)).abs() < 1e-12);
        }
        let (_, w) = g.stencil(&[0.3, 0.4]);
        assert!(w.iter().all(|&w| w >= 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quadratic_interpolates_between_nodes() {
        let g = GridSpec {
            lo: vec![0.0],
            hi: vec![2.0],
            nodes: vec![3],
            time_steps: 1,
            horizon: 1.0,
            margin: 0,
        };
        assert_eq!(g.interpolate(&[0.0, 1.0, 4.0], &[0.5]), 0.5);
    }

    #[test]
    fn constructor_defaults() {
        let spec = catalog::heat(0.5);
        let g = GridSpec::new(&spec, vec![-2.0], vec![2.0], vec![201], None, None).unwrap();
        // Δt ≤ Δx²/σ²
        assert!(g.dt() <= 0.02f64.powi(2) / 0.25 + 1e-15);
        assert_eq!(g.margin, 75);
        let spec = catalog::reset(0.1);
        let g = GridSpec::new(&spec, vec![-2.0], vec![2.0], vec![41], None, None).unwrap();
        assert_eq!(g.time_steps, DEFAULT_TIME_STEPS);
        assert_eq!(g.margin, 0);
        assert!(GridSpec::new(&spec, vec![-0.5], vec![2.0], vec![41], None, None).is_err());
        assert!(GridSpec::new(&spec, vec![-2.0], vec![2.0], vec![41], None, Some(21)).is_err());
    }
}
