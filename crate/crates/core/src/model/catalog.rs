//! Built-in coefficient families and benchmark instances.

use std::collections::BTreeMap;

use super::problem::{Constants, ProblemSpec, Sources};
use crate::error::{Error, Result};

pub type Params = BTreeMap<String, f64>;

fn param(params: &Params, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

fn norm_sq(n: usize) -> String {
    (1..=n).map(|i| format!("x{i}^2")).collect::<Vec<_>>().join(" + ")
}

/// Dimensions a family expands against.
#[derive(Debug, Clone, Copy)]
pub struct Dims {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub q: usize,
}

fn broadcast(var: &str, i: usize, dim: usize, n: usize) -> Result<String> {
    if dim == 1 {
        Ok(format!("{var}1"))
    } else if dim == n {
        Ok(format!("{var}{}", i + 1))
    } else {
        Err(Error::Dimension(format!(
            "family needs `{var}` of dimension 1 or matching the state"
        )))
    }
}

/// Expand a named family for one coefficient field into expression sources.
pub fn expand_family(field: &str, family: &str, params: &Params, dims: Dims) -> Result<Vec<String>> {
    let Dims { n, d, m, q } = dims;
    let unknown = || Error::Config(format!("unknown family `{family}` for `{field}`"));
    let out = match (field, family) {
        ("drift", "zero") => vec!["0".to_string(); n],
        ("drift", "linear") => {
            let slope = param(params, "slope", 0.0);
            let icpt = param(params, "intercept", 0.0);
            (1..=n).map(|i| format!("{icpt:?} + {slope:?}*x{i}")).collect()
        }
        ("drift", "control") => {
            let scale = param(params, "scale", 1.0);
            (0..n)
                .map(|i| Ok(format!("{scale:?}*{}", broadcast("alpha", i, m, n)?)))
                .collect::<Result<_>>()?
        }
        ("diffusion", "zero") => vec!["0".to_string(); n * d],
        ("diffusion", "constant") => {
            let s = param(params, "s", 1.0);
            let mut v = vec!["0".to_string(); n * d];
            for i in 0..n.min(d) {
                v[i * d + i] = format!("{s:?}");
            }
            v
        }
        ("driver", "zero") => vec!["0".into()],
        ("driver", "linear") => {
            let r = param(params, "r", 0.0);
            let c = param(params, "c", 0.0);
            vec![format!("{r:?}*y + {c:?}")]
        }
        ("terminal", "quadratic") => {
            let c = param(params, "c", 1.0);
            vec![format!("{c:?}*({})", norm_sq(n))]
        }
        ("terminal", "affine") => {
            let slope = param(params, "slope", 1.0);
            let icpt = param(params, "intercept", 0.0);
            let sum = (1..=n).map(|i| format!("x{i}")).collect::<Vec<_>>().join(" + ");
            vec![format!("{icpt:?} + {slope:?}*({sum})")]
        }
        ("cost", "constant") => vec![format!("{:?}", param(params, "c", 1.0))],
        ("cost", "affine") => {
            let c0 = param(params, "c0", 1.0);
            let c1 = param(params, "c1", 0.0);
            vec![format!("{c0:?} + {c1:?}*sqrt({})", norm_sq(n))]
        }
        ("impulse_map", "identity") => (1..=n).map(|i| format!("x{i}")).collect(),
        ("impulse_map", "reset") => (0..n)
            .map(|i| broadcast("b", i, q, n))
            .collect::<Result<_>>()?,
        ("impulse_map", "shift") => (0..n)
            .map(|i| Ok(format!("x{} + {}", i + 1, broadcast("b", i, q, n)?)))
            .collect::<Result<_>>()?,
        _ => return Err(unknown()),
    };
    Ok(out)
}

/// Source form of a named benchmark instance.
pub fn benchmark_sources(name: &str, params: &Params) -> Result<Sources> {
    let horizon = param(params, "horizon", 1.0);
    match name {
        "heat" => {
            let s = param(params, "s", 0.5);
            Ok(Sources {
                horizon,
                state_dim: 1,
                noise_dim: 1,
                drift: vec!["0".into()],
                diffusion: vec![format!("{s:?}")],
                driver: "0".into(),
                terminal: "x1^2".into(),
                cost: "1000000.0".into(),
                impulse_map: vec!["x1".into()],
                actions: vec![vec![0.0]],
                impulses: vec![vec![0.0]],
                constants: Constants {
                    delta_floor: 1.0,
                    k_gamma: 1.0,
                    growth_rho: 2.0,
                    holder_varsigma: 1.0,
                    lipschitz_kf: 0.0,
                    lipschitz_c: 1.0,
                },
            })
        }
        "reset" | "reset_game" => {
            let c = param(params, "cost", 0.1);
            let start = param(params, "ramp_start", 0.8) * horizon;
            let slope = param(params, "ramp_slope", 2.0);
            let speed = param(params, "speed", 0.5);
            let skew = param(params, "skew", 2.0);
            let game = name == "reset_game";
            let cost = format!(
                "{c:?} + {slope:?}*x1^2*min(max((t - {start:?})/{:?}, 0), 1)",
                horizon - start
            );
            Ok(Sources {
                horizon,
                state_dim: 1,
                noise_dim: 1,
                drift: vec![if game { "alpha1".into() } else { "0".into() }],
                diffusion: vec!["0".into()],
                driver: "0".into(),
                terminal: "-x1^2".into(),
                cost,
                impulse_map: vec!["b1".into()],
                actions: if game {
                    vec![vec![-speed], vec![0.0], vec![skew * speed]]
                } else {
                    vec![vec![0.0]]
                },
                impulses: vec![vec![0.0]],
                constants: Constants {
                    delta_floor: c,
                    k_gamma: 1.0,
                    growth_rho: 2.0,
                    holder_varsigma: 1.0,
                    lipschitz_kf: 0.0,
                    lipschitz_c: 1.0,
                },
            })
        }
        "linear_driver" => {
            let r = param(params, "r", 0.5);
            let s = param(params, "s", 0.1);
            Ok(Sources {
                horizon,
                state_dim: 1,
                noise_dim: 1,
                drift: vec!["0".into()],
                diffusion: vec![format!("{s:?}")],
                driver: format!("{r:?}*y"),
                terminal: "x1".into(),
                cost: "1000000.0".into(),
                impulse_map: vec!["x1".into()],
                actions: vec![vec![0.0]],
                impulses: vec![vec![0.0]],
                constants: Constants {
                    delta_floor: 1.0,
                    k_gamma: 1.0,
                    growth_rho: 1.0,
                    holder_varsigma: 1.0,
                    lipschitz_kf: r.abs(),
                    lipschitz_c: 1.0,
                },
            })
        }
        other => Err(Error::Config(format!("unknown benchmark `{other}`"))),
    }
}

fn build(name: &str, params: &[(&str, f64)]) -> ProblemSpec {
    let p: Params = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    ProblemSpec::from_sources(&benchmark_sources(name, &p).expect("catalog entry"))
        .expect("catalog entries are valid")
}

/// `a ≡ 0`, `σ ≡ s`, `f ≡ 0`, `ψ(x) = x²`, prohibitive impulse cost.
/// Exact value `x² + s²(T − t)`.
pub fn heat(s: f64) -> ProblemSpec {
    build("heat", &[("s", s)])
}

/// Deterministic reset-to-zero instance with `ψ(x) = −x²` and a cost that
/// ramps up near the horizon so that terminal interventions never pay.
pub fn reset(cost: f64) -> ProblemSpec {
    build("reset", &[("cost", cost)])
}

/// [`reset`] with the opponent steering the drift in `{−v, 0, 2v}`. The
/// lopsided action set makes the opponent's best reply at the reset target
/// differ from its reply elsewhere.
pub fn reset_game(cost: f64, speed: f64) -> ProblemSpec {
    build("reset_game", &[("cost", cost), ("speed", speed)])
}

/// `f = r·y`, `ψ(x) = x`, `σ ≡ s`, no profitable impulses.
pub fn linear_driver(r: f64, s: f64) -> ProblemSpec {
    build("linear_driver", &[("r", r), ("s", s)])
}
