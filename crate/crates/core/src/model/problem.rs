use serde::{Deserialize, Serialize};

use super::expr::{Env, Expr, Signature, Var};
use crate::error::{Error, Result};

/// Declared structural constants of a game instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Lower bound on the intervention cost.
    pub delta_floor: f64,
    /// Radius in the impulse-map growth bound `|Γ(t,x,b)| ≤ K ∨ |x|`.
    pub k_gamma: f64,
    /// Polynomial growth exponent.
    pub growth_rho: f64,
    /// Time-Hölder exponent of cost and impulse map.
    pub holder_varsigma: f64,
    /// Lipschitz constant of the driver.
    pub lipschitz_kf: f64,
    /// Lipschitz constant used for drift and diffusion probes.
    pub lipschitz_c: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Constants {
            delta_floor: 1.0,
            k_gamma: 1.0,
            growth_rho: 2.0,
            holder_varsigma: 1.0,
            lipschitz_kf: 0.0,
            lipschitz_c: 1.0,
        }
    }
}

/// A fully materialized game instance.
///
/// Coefficients are expression trees; `diffusion` is stored row-major
/// (`n` rows, `d` columns). The compact sets `A` and `U` are finite lists of
/// vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub horizon: f64,
    pub state_dim: usize,
    pub noise_dim: usize,
    pub drift: Vec<Expr>,
    pub diffusion: Vec<Expr>,
    pub driver: Expr,
    pub terminal: Expr,
    pub cost: Expr,
    pub impulse_map: Vec<Expr>,
    pub actions: Vec<Vec<f64>>,
    pub impulses: Vec<Vec<f64>>,
    pub constants: Constants,
}

/// String form of the coefficients, parsed by [`ProblemSpec::from_sources`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sources {
    pub horizon: f64,
    pub state_dim: usize,
    pub noise_dim: usize,
    pub drift: Vec<String>,
    pub diffusion: Vec<String>,
    pub driver: String,
    pub terminal: String,
    pub cost: String,
    pub impulse_map: Vec<String>,
    pub actions: Vec<Vec<f64>>,
    pub impulses: Vec<Vec<f64>>,
    pub constants: Constants,
}

impl ProblemSpec {
    pub fn from_sources(src: &Sources) -> Result<ProblemSpec> {
        let n = src.state_dim;
        let d = src.noise_dim;
        if n == 0 {
            return Err(Error::Config("state dimension must be at least 1".into()));
        }
        if d == 0 {
            return Err(Error::Config("noise dimension must be at least 1".into()));
        }
        if !(src.horizon > 0.0) || !src.horizon.is_finite() {
            return Err(Error::Config("horizon must be strictly positive".into()));
        }
        if src.actions.is_empty() {
            return Err(Error::Config("action set A is empty".into()));
        }
        if src.impulses.is_empty() {
            return Err(Error::Config("impulse set U is empty".into()));
        }
        let m = src.actions[0].len();
        let q = src.impulses[0].len();
        if src.actions.iter().any(|a| a.len() != m) {
            return Err(Error::Dimension("actions have differing lengths".into()));
        }
        if src.impulses.iter().any(|b| b.len() != q) {
            return Err(Error::Dimension("impulses have differing lengths".into()));
        }
        let c = src.constants;
        if !(c.delta_floor > 0.0) {
            return Err(Error::Config("δ must be strictly positive".into()));
        }
        if c.k_gamma < 0.0 || c.growth_rho < 0.0 || c.lipschitz_kf < 0.0 || c.lipschitz_c < 0.0 {
            return Err(Error::Config("structural constants must be nonnegative".into()));
        }
        if !(c.holder_varsigma > 0.0 && c.holder_varsigma <= 1.0) {
            return Err(Error::Config("Hölder exponent must lie in (0, 1]".into()));
        }

        let sig_ax = Signature::new().time().state(n).action(m);
        let sig_f = sig_ax.value().noise(d);
        let sig_psi = Signature::new().state(n);
        let sig_b = Signature::new().time().state(n).impulse(q);

        let parse_vec = |field: &str, items: &[String], len: usize, sig: &Signature| {
            if items.len() != len {
                return Err(Error::Dimension(format!(
                    "{field} needs {len} components, got {}",
                    items.len()
                )));
            }
            items.iter().map(|s| Expr::parse(s, sig)).collect::<Result<Vec<_>>>()
        };

        Ok(ProblemSpec {
            horizon: src.horizon,
            state_dim: n,
            noise_dim: d,
            drift: parse_vec("drift", &src.drift, n, &sig_ax)?,
            diffusion: parse_vec("diffusion", &src.diffusion, n * d, &sig_ax)?,
            driver: Expr::parse(&src.driver, &sig_f)?,
            terminal: Expr::parse(&src.terminal, &sig_psi)?,
            cost: Expr::parse(&src.cost, &sig_b)?,
            impulse_map: parse_vec("impulse_map", &src.impulse_map, n, &sig_b)?,
            actions: src.actions.clone(),
            impulses: src.impulses.clone(),
            constants: c,
        })
    }

    /// Inverse of [`ProblemSpec::from_sources`] up to formatting.
    pub fn to_sources(&self) -> Sources {
        let s = |v: &[Expr]| v.iter().map(|e| e.to_string()).collect();
        Sources {
            horizon: self.horizon,
            state_dim: self.state_dim,
            noise_dim: self.noise_dim,
            drift: s(&self.drift),
            diffusion: s(&self.diffusion),
            driver: self.driver.to_string(),
            terminal: self.terminal.to_string(),
            cost: self.cost.to_string(),
            impulse_map: s(&self.impulse_map),
            actions: self.actions.clone(),
            impulses: self.impulses.clone(),
            constants: self.constants,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.actions[0].len()
    }

    pub fn impulse_dim(&self) -> usize {
        self.impulses[0].len()
    }

    pub fn action(&self, idx: usize) -> &[f64] {
        &self.actions[idx]
    }

    pub fn impulse(&self, idx: usize) -> Result<&[f64]> {
        self.impulses
            .get(idx)
            .map(Vec::as_slice)
            .ok_or(Error::NotInImpulseSet(idx))
    }

    pub fn drift_into(&self, t: f64, x: &[f64], alpha: &[f64], out: &mut [f64]) -> Result<()> {
        let env = Env {
            t,
            x,
            alpha,
            ..Env::default()
        };
        for (o, e) in out.iter_mut().zip(&self.drift) {
            *o = e.eval(&env)?;
        }
        Ok(())
    }

    /// Row-major `n × d` diffusion matrix.
    pub fn diffusion_into(&self, t: f64, x: &[f64], alpha: &[f64], out: &mut [f64]) -> Result<()> {
        let env = Env {
            t,
            x,
            alpha,
            ..Env::default()
        };
        for (o, e) in out.iter_mut().zip(&self.diffusion) {
            *o = e.eval(&env)?;
        }
        Ok(())
    }

    pub fn driver(&self, t: f64, x: &[f64], y: f64, z: &[f64], alpha: &[f64]) -> Result<f64> {
        self.driver.eval(&Env { t, x, alpha, y, z, b: &[] })
    }

    pub fn terminal(&self, x: &[f64]) -> Result<f64> {
        self.terminal.eval(&Env {
            x,
            ..Env::default()
        })
    }

    pub fn cost(&self, t: f64, x: &[f64], b: &[f64]) -> Result<f64> {
        self.cost.eval(&Env {
            t,
            x,
            b,
            ..Env::default()
        })
    }

    pub fn impulse_into(&self, t: f64, x: &[f64], b: &[f64], out: &mut [f64]) -> Result<()> {
        let env = Env {
            t,
            x,
            b,
            ..Env::default()
        };
        for (o, e) in out.iter_mut().zip(&self.impulse_map) {
            *o = e.eval(&env)?;
        }
        Ok(())
    }

    pub fn driver_depends_on_z(&self) -> bool {
        self.driver.uses(&|v| matches!(v, Var::Z(_)))
    }

    pub fn has_diffusion(&self) -> bool {
        !self
            .diffusion
            .iter()
            .all(|e| matches!(e, Expr::Num(c) if *c == 0.0))
    }

    /// Copy with `c` added to the driver.
    pub fn with_driver_shift(&self, c: f64) -> ProblemSpec {
        let mut s = self.clone();
        s.driver = s.driver.plus(c);
        s
    }

    /// Copy with `c` added to the terminal reward.
    pub fn with_terminal_shift(&self, c: f64) -> ProblemSpec {
        let mut s = self.clone();
        s.terminal = s.terminal.plus(c);
        s
    }
}

/// `p·a + ½ tr(σσᵀ X) + f(t, x, y, pᵀσ, α)`.
///
/// `hess` is the row-major `n × n` matrix `X`.
pub fn hamiltonian(
    spec: &ProblemSpec,
    t: f64,
    x: &[f64],
    y: f64,
    p: &[f64],
    hess: &[f64],
    alpha: &[f64],
) -> Result<f64> {
    let n = spec.state_dim;
    let d = spec.noise_dim;
    if x.len() != n || p.len() != n || hess.len() != n * n {
        return Err(Error::Dimension(format!(
            "hamiltonian expects x, p of length {n} and X of size {n}x{n}"
        )));
    }
    if alpha.len() != spec.action_dim() {
        return Err(Error::Dimension("action has wrong length".into()));
    }
    let mut a = vec![0.0; n];
    let mut sigma = vec![0.0; n * d];
    spec.drift_into(t, x, alpha, &mut a)?;
    spec.diffusion_into(t, x, alpha, &mut sigma)?;

    let transport: f64 = p.iter().zip(&a).map(|(pi, ai)| pi * ai).sum();
    // tr(σσᵀX) = Σ_{i,j} (σσᵀ)_{ij} X_{ji}
    let mut trace = 0.0;
    for i in 0..n {
        for j in 0..n {
            let sij: f64 = (0..d).map(|k| sigma[i * d + k] * sigma[j * d + k]).sum();
            trace += sij * hess[j * n + i];
        }
    }
    let z: Vec<f64> = (0..d)
        .map(|k| (0..n).map(|i| p[i] * sigma[i * d + k]).sum())
        .collect();
    Ok(transport + 0.5 * trace + spec.driver(t, x, y, &z, alpha)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn sources_1d(drift: &str, diffusion: &str, driver: &str) -> Sources {
        Sources {
            horizon: 1.0,
            state_dim: 1,
            noise_dim: 1,
            drift: vec![drift.into()],
            diffusion: vec![diffusion.into()],
            driver: driver.into(),
            terminal: "x^2".into(),
            cost: "1".into(),
            impulse_map: vec!["x".into()],
            actions: vec![vec![0.0]],
            impulses: vec![vec![0.0]],
            constants: Constants::default(),
        }
    }

    fn spec(drift: &str, diffusion: &str, driver: &str) -> ProblemSpec {
        ProblemSpec::from_sources(&sources_1d(drift, diffusion, driver)).unwrap()
    }

    #[test]
    fn hamiltonian_single_terms() {
        let s = spec("1", "0", "0");
        assert_eq!(hamiltonian(&s, 0.0, &[0.0], 0.0, &[2.0], &[0.0], &[0.0]).unwrap(), 2.0);
        let s = spec("0", "1", "0");
        assert_eq!(hamiltonian(&s, 0.0, &[0.0], 0.0, &[0.0], &[4.0], &[0.0]).unwrap(), 2.0);
        let s = spec("1", "1", "z");
        assert_eq!(hamiltonian(&s, 0.0, &[0.0], 0.0, &[3.0], &[0.0], &[0.0]).unwrap(), 6.0);
    }

    #[test]
    fn hamiltonian_rejects_bad_dimensions() {
        let s = spec("1", "1", "0");
        assert!(matches!(
            hamiltonian(&s, 0.0, &[0.0, 1.0], 0.0, &[1.0], &[0.0], &[0.0]),
            Err(Error::Dimension(_))
        ));
        assert!(hamiltonian(&s, 0.0, &[0.0], 0.0, &[1.0], &[0.0, 0.0], &[0.0]).is_err());
    }

    #[test]
    fn constructor_rejects_invalid_constants_and_sets() {
        let mut src = sources_1d("0", "0", "0");
        src.constants.delta_floor = 0.0;
        match ProblemSpec::from_sources(&src) {
            Err(Error::Config(msg)) => assert!(msg.contains("δ must be strictly positive")),
            other => panic!("{other:?}"),
        }
        let mut src = sources_1d("0", "0", "0");
        src.impulses.clear();
        assert!(ProblemSpec::from_sources(&src).is_err());
        let mut src = sources_1d("0", "0", "0");
        src.drift.push("1".into());
        assert!(matches!(
            ProblemSpec::from_sources(&src),
            Err(Error::Dimension(_))
        ));
        let mut src = sources_1d("0", "0", "q");
        src.drift[0] = "0".into();
        assert!(matches!(
            ProblemSpec::from_sources(&src),
            Err(Error::UnknownVariable { .. })
        ));
    }

    #[test]
    fn sources_round_trip() {
        let s = spec("x*alpha - 1", "0.3", "0.5*y - abs(z)");
        let back = ProblemSpec::from_sources(&s.to_sources()).unwrap();
        assert_eq!(back, s);
    }

    proptest! {
        #[test]
        fn hamiltonian_linear_in_hessian(
            a in -2.0f64..2.0, sig in -2.0f64..2.0, p in -3.0f64..3.0,
            xx in -3.0f64..3.0, c in -5.0f64..5.0,
        ) {
            let s = spec(&format!("{a}*x"), &format!("{sig} + 0.1*x"), "0.3*y + abs(z)");
            let h = |m: f64| hamiltonian(&s, 0.2, &[0.7], 1.0, &[p], &[m], &[0.0]).unwrap();
            let lhs = h(c * xx) - h(0.0);
            let rhs = c * (h(xx) - h(0.0));
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
        }

        #[test]
        fn hamiltonian_linear_in_gradient_without_z(
            p in -3.0f64..3.0, q in -3.0f64..3.0, c in -4.0f64..4.0,
        ) {
            let s = spec("sin(x) + 1", "0.5", "0.2*y + x");
            let h = |pp: f64| hamiltonian(&s, 0.1, &[0.4], 0.5, &[pp], &[0.0], &[0.0]).unwrap();
            let lhs = h(c * p + q) - h(0.0);
            let rhs = c * (h(p) - h(0.0)) + (h(q) - h(0.0));
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
        }
    }
}
