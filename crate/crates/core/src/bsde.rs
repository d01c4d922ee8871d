//! Cost functional and backward semigroup by least-squares Monte Carlo.
//!
//! The BSDE is solved for the shifted process `Ỹ = Y − Ξ`, whose terminal
//! value is `ψ(X_T) − Ξ_{T+}` and whose driver sees `Ỹ + Ξ`. On each slice
//! the pathwise next-step value `Y_{i+1} = Ỹ_{i+1} + Ξ_{t_{i+1}}` (a function
//! of the post-impulse state at `t_i` and the increment) is regressed on a
//! polynomial basis in `X_{t_i}`, giving `ĝ ≈ E_i[Y_{i+1}]` and
//! `Z_i ≈ E_i[(Y_{i+1} − ĝ) ΔW_i] / h`. The pathwise update is
//!
//! ```text
//! Y_i = Y_{i+1} + h f(t_i, X_i, ĝ(X_i), Z_i, α_i) − (cost charged at t_i)
//! ```
//!
//! so the estimate at `t0` is the sample mean of `Y_0`, and its spread gives
//! the standard error.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{mean_stderr, simulate_window, PathBundle, PolicyPair, SimSetup, Starts};
use crate::model::ProblemSpec;

/// Above this condition number the normal equations get ridge damping.
pub const RIDGE_THRESHOLD: f64 = 1e10;

pub type Terminal<'a> = &'a (dyn Fn(&[f64]) -> Result<f64> + Sync);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub degree: usize,
    #[serde(default)]
    pub antithetic: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            n_paths: 10_000,
            n_steps: 50,
            seed: 42,
            degree: 2,
            antithetic: false,
        }
    }
}

impl McConfig {
    pub fn new(n_paths: usize, n_steps: usize, seed: u64) -> Self {
        McConfig {
            n_paths,
            n_steps,
            seed,
            ..Self::default()
        }
    }

    pub fn with_degree(mut self, degree: usize) -> Self {
        self.degree = degree;
        self
    }

    pub fn with_antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    pub fn validate(&self, state_dim: usize) -> Result<()> {
        let size = basis_size(state_dim, self.degree);
        if self.n_paths < size {
            return Err(Error::Config(format!(
                "{} paths cannot fit a basis of {size} functions",
                self.n_paths
            )));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        if self.antithetic && self.n_paths % 2 == 1 {
            return Err(Error::Config("antithetic sampling needs an even path count".into()));
        }
        Ok(())
    }

    pub fn setup(&self, t0: f64, t_end: f64) -> SimSetup {
        SimSetup {
            antithetic: self.antithetic,
            ..SimSetup::new(t0, t_end, self.n_paths, self.n_steps, self.seed)
        }
    }
}

/// Number of monomials of total degree at most `p` in `n` variables.
pub fn basis_size(n: usize, p: usize) -> usize {
    // C(n + p, p)
    (1..=p).fold(1usize, |acc, k| acc * (n + k) / k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceDiagnostic {
    pub slice: usize,
    pub basis_size: usize,
    pub condition_number: f64,
    pub residual_norm: f64,
    pub ridge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsdeEstimate {
    pub value: f64,
    pub stderr: f64,
    pub diagnostics: Vec<SliceDiagnostic>,
}

impl BsdeEstimate {
    pub fn write_diagnostics_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "slice,condition_number,residual")?;
        for d in &self.diagnostics {
            writeln!(w, "{},{:?},{:?}", d.slice, d.condition_number, d.residual_norm)?;
        }
        Ok(())
    }
}

/// Polynomial features in standardized coordinates. Coordinates with no
/// spread across paths are dropped; non-constant columns are centered so the
/// intercept of a least-squares fit is the sample mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    center: Vec<f64>,
    scale: Vec<f64>,
    active: Vec<usize>,
    exponents: Vec<Vec<u32>>,
    col_means: Vec<f64>,
    degree: usize,
}

fn exponents(vars: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0u32; vars]];
    for total in 1..=degree as u32 {
        let mut cur = vec![0u32; vars];
        fill(&mut out, &mut cur, 0, total);
    }
    out
}

fn fill(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, k: usize, left: u32) {
    if k + 1 == cur.len() {
        cur[k] = left;
        out.push(cur.clone());
        return;
    }
    for e in (0..=left).rev() {
        cur[k] = e;
        fill(out, cur, k + 1, left - e);
    }
    cur[k] = 0;
}

impl Basis {
    /// Fit standardization to `xs` (flat `rows × n`).
    pub fn fit(xs: &[f64], n: usize, degree: usize) -> Basis {
        let rows = xs.len() / n;
        let mut center = vec![0.0; n];
        let mut scale = vec![1.0; n];
        let mut active = Vec::new();
        for k in 0..n {
            let mean = (0..rows).map(|r| xs[r * n + k]).sum::<f64>() / rows as f64;
            let var = (0..rows).map(|r| (xs[r * n + k] - mean).powi(2)).sum::<f64>() / rows as f64;
            let sd = var.sqrt();
            center[k] = mean;
            if sd > 1e-10 * (1.0 + mean.abs()) {
                scale[k] = sd;
                active.push(k);
            }
        }
        let exps = if active.is_empty() { vec![vec![]] } else { exponents(active.len(), degree) };
        let mut basis = Basis {
            center,
            scale,
            active,
            exponents: exps,
            col_means: Vec::new(),
            degree,
        };
        let size = basis.len();
        let mut sums = vec![0.0; size];
        let mut row = vec![0.0; size];
        for r in 0..rows {
            basis.raw_row(&xs[r * n..(r + 1) * n], &mut row);
            for (s, v) in sums.iter_mut().zip(&row) {
                *s += v;
            }
        }
        basis.col_means = sums.iter().map(|s| s / rows as f64).collect();
        basis.col_means[0] = 0.0;
        basis
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    fn raw_row(&self, x: &[f64], out: &mut [f64]) {
        let u: Vec<f64> = self
            .active
            .iter()
            .map(|&k| (x[k] - self.center[k]) / self.scale[k])
            .collect();
        for (o, e) in out.iter_mut().zip(&self.exponents) {
            *o = e.iter().zip(&u).map(|(&p, &v)| v.powi(p as i32)).product();
        }
    }

    pub fn row(&self, x: &[f64], out: &mut [f64]) {
        self.raw_row(x, out);
        for (o, m) in out.iter_mut().zip(&self.col_means) {
            *o -= m;
        }
    }

    pub fn eval(&self, coef: &[f64], x: &[f64]) -> f64 {
        let mut row = vec![0.0; self.len()];
        self.row(x, &mut row);
        row.iter().zip(coef).map(|(a, b)| a * b).sum()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }
}

/// Factorized least-squares problem for one design matrix.
pub struct LeastSquares {
    design: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    pub condition_number: f64,
    pub ridge: f64,
}

impl LeastSquares {
    pub fn new(design: DMatrix<f64>, slice: usize) -> Result<Self> {
        let (rows, cols) = design.shape();
        if rows < cols {
            return Err(Error::RankDeficient { slice });
        }
        let mut gram = design.tr_mul(&design) / rows as f64;
        if gram.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("regression design at slice {slice}")));
        }
        let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
        let max = eig.max();
        let min = eig.min().max(0.0);
        let condition_number = if min > 0.0 { max / min } else { f64::INFINITY };
        let mut ridge = 0.0;
        if condition_number > RIDGE_THRESHOLD {
            ridge = max / RIDGE_THRESHOLD;
            for k in 1..cols {
                gram[(k, k)] += ridge;
            }
        }
        let chol = gram.cholesky().ok_or(Error::RankDeficient { slice })?;
        Ok(LeastSquares {
            design,
            chol,
            condition_number,
            ridge,
        })
    }

    pub fn solve(&self, y: &[f64]) -> Vec<f64> {
        let rows = self.design.nrows() as f64;
        let rhs = self.design.tr_mul(&DVector::from_column_slice(y)) / rows;
        self.chol.solve(&rhs).iter().copied().collect()
    }

    pub fn fitted(&self, coef: &[f64]) -> Vec<f64> {
        (&self.design * DVector::from_column_slice(coef)).iter().copied().collect()
    }
}

fn design_matrix(basis: &Basis, xs: &[f64], n: usize) -> DMatrix<f64> {
    let rows = xs.len() / n;
    let cols = basis.len();
    let data: Vec<Vec<f64>> = (0..rows)
        .into_par_iter()
        .map(|r| {
            let mut row = vec![0.0; cols];
            basis.row(&xs[r * n..(r + 1) * n], &mut row);
            row
        })
        .collect();
    DMatrix::from_fn(rows, cols, |r, c| data[r][c])
}

/// Regression fit at the first mesh time, used to read the solution as a
/// function of the starting state.
#[derive(Debug, Clone)]
pub struct SliceFit {
    pub t: f64,
    pub h: f64,
    pub basis: Basis,
    pub value: Vec<f64>,
    pub z: Vec<Vec<f64>>,
}

impl SliceFit {
    /// `ĝ(x) + h f(t, x, ĝ(x), Ẑ(x), α)` for action index `action`.
    pub fn eval(&self, spec: &ProblemSpec, x: &[f64], action: usize) -> Result<f64> {
        let g = self.basis.eval(&self.value, x);
        let z: Vec<f64> = if self.z.is_empty() {
            vec![0.0; spec.noise_dim]
        } else {
            self.z.iter().map(|c| self.basis.eval(c, x)).collect()
        };
        Ok(g + self.h * spec.driver(self.t, x, g, &z, spec.action(action))?)
    }
}

#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub estimate: BsdeEstimate,
    /// `Y` at the first mesh time, per path.
    pub pathwise: Vec<f64>,
    pub first_slice: SliceFit,
}

/// Backward pass over a simulated bundle with terminal datum `terminal(X_end)`.
pub fn solve_bundle(spec: &ProblemSpec, bundle: &PathBundle, terminal: Terminal<'_>, degree: usize) -> Result<BsdeSolution> {
    let n = spec.state_dim;
    let d = spec.noise_dim;
    let np = bundle.n_paths();
    let m = bundle.n_steps();
    let h = bundle.setup.step();
    let with_z = spec.driver_depends_on_z();

    // Y at the last mesh time: Ỹ_T + Ξ_T = ψ(X_T) − (cost charged at T).
    let mut y: Vec<f64> = (0..np)
        .into_par_iter()
        .map(|p| {
            let v = terminal(bundle.state(p, m))? - (bundle.xi_total[p] - bundle.xi_at(p, m));
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFinite(format!("terminal value on path {p}")))
            }
        })
        .collect::<Vec<Result<f64>>>()
        .into_iter()
        .collect::<Result<_>>()?;

    let mut diagnostics = Vec::with_capacity(m);
    let mut first = None;
    let mut xs = vec![0.0; np * n];
    for i in (0..m).rev() {
        for p in 0..np {
            xs[p * n..(p + 1) * n].copy_from_slice(bundle.state(p, i));
        }
        let basis = Basis::fit(&xs, n, degree);
        let ls = LeastSquares::new(design_matrix(&basis, &xs, n), i)?;
        let g_coef = ls.solve(&y);
        let g = ls.fitted(&g_coef);
        let residual_norm = (y.iter().zip(&g).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / np as f64).sqrt();

        let z_coef: Vec<Vec<f64>> = if with_z {
            (0..d)
                .map(|j| {
                    let target: Vec<f64> = (0..np)
                        .map(|p| (y[p] - g[p]) * bundle.increment(p, i)[j] / h)
                        .collect();
                    ls.solve(&target)
                })
                .collect()
        } else {
            Vec::new()
        };
        let z_fit: Vec<Vec<f64>> = z_coef.iter().map(|c| ls.fitted(c)).collect();

        let t = bundle.times[i];
        let updates: Vec<Result<f64>> = (0..np)
            .into_par_iter()
            .map(|p| {
                let z: Vec<f64> = if with_z { z_fit.iter().map(|c| c[p]).collect() } else { vec![0.0; d] };
                let alpha = spec.action(bundle.action(p, i));
                let f = spec.driver(t, bundle.state(p, i), g[p], &z, alpha)?;
                let charged = bundle.xi_after(p, i) - bundle.xi_at(p, i);
                let v = y[p] + h * f - charged;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFinite(format!("value at slice {i} on path {p}")))
                }
            })
            .collect();
        for (slot, u) in y.iter_mut().zip(updates) {
            *slot = u?;
        }

        diagnostics.push(SliceDiagnostic {
            slice: i,
            basis_size: basis.len(),
            condition_number: ls.condition_number,
            residual_norm,
            ridge: ls.ridge,
        });
        if i == 0 {
            first = Some(SliceFit {
                t,
                h,
                basis,
                value: g_coef,
                z: z_coef,
            });
        }
    }
    diagnostics.reverse();

    let summary = if bundle.setup.antithetic {
        let pairs: Vec<f64> = y.chunks(2).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        mean_stderr(&pairs)
    } else {
        mean_stderr(&y)
    };
    Ok(BsdeSolution {
        estimate: BsdeEstimate {
            value: summary.estimate,
            stderr: summary.stderr,
            diagnostics,
        },
        pathwise: y,
        first_slice: first.expect("at least one slice"),
    })
}

/// `J(t0, x0; u, α) = Y_{t0}` under the given policies.
pub fn evaluate_cost(spec: &ProblemSpec, t0: f64, x0: &[f64], policies: &PolicyPair, mc: &McConfig) -> Result<BsdeEstimate> {
    if !(0.0..spec.horizon).contains(&t0) {
        return Err(Error::Config(format!("t0 = {t0} outside [0, {})", spec.horizon)));
    }
    mc.validate(spec.state_dim)?;
    let bundle = simulate_window(spec, &mc.setup(t0, spec.horizon), Starts::Point(x0), policies)?;
    let psi = |x: &[f64]| spec.terminal(x);
    Ok(solve_bundle(spec, &bundle, &psi, mc.degree)?.estimate)
}

/// `G_{t,t+h}[η(X_{t+h})]` started from `x`, with intervention costs on `[t, t+h]`.
pub fn backward_semigroup(
    spec: &ProblemSpec,
    t: f64,
    h: f64,
    eta: Terminal<'_>,
    x: &[f64],
    policies: &PolicyPair,
    mc: &McConfig,
) -> Result<BsdeEstimate> {
    if h == 0.0 {
        return Ok(BsdeEstimate {
            value: eta(x)?,
            stderr: 0.0,
            diagnostics: Vec::new(),
        });
    }
    if !(t >= 0.0 && h > 0.0 && t + h <= spec.horizon * (1.0 + 1e-12)) {
        return Err(Error::Config(format!("window [{t}, {t} + {h}] outside [0, {}]", spec.horizon)));
    }
    mc.validate(spec.state_dim)?;
    let bundle = simulate_window(spec, &mc.setup(t, t + h), Starts::Point(x), policies)?;
    Ok(solve_bundle(spec, &bundle, eta, mc.degree)?.estimate)
}
