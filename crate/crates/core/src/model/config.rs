//! JSON configuration: `problem`, `grid`, `mc` and `solver` sections.
//!
//! Coefficient fields take either an expression string, an array of
//! strings (one per component), or `{"family": NAME, "params": {..}}`.
//! A `problem.benchmark` entry pre-populates every field from the catalog;
//! explicit fields then override it.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::catalog::{benchmark_sources, expand_family, Dims, Params};
use super::problem::{Constants, ProblemSpec, Sources};
use crate::error::{Error, Result};

const COEFFICIENTS: [&str; 6] = [
    "drift",
    "diffusion",
    "driver",
    "terminal",
    "cost",
    "impulse_map",
];

fn get<'a>(obj: &'a Value, key: &str) -> Option<&'a Value> {
    obj.get(key).filter(|v| !v.is_null())
}

fn as_f64(v: &Value, key: &str) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| Error::Config(format!("`{key}` must be a number")))
}

fn as_usize(v: &Value, key: &str) -> Result<usize> {
    v.as_u64()
        .map(|u| u as usize)
        .ok_or_else(|| Error::Config(format!("`{key}` must be a nonnegative integer")))
}

fn params_of(v: Option<&Value>) -> Result<Params> {
    let Some(v) = v else {
        return Ok(Params::new());
    };
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Config("`params` must be an object".into()))?;
    obj.iter()
        .map(|(k, v)| Ok((k.clone(), as_f64(v, k)?)))
        .collect()
}

fn vector_list(v: &Value, key: &str) -> Result<Vec<Vec<f64>>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::Config(format!("`{key}` must be an array")))?;
    arr.iter()
        .map(|item| match item {
            Value::Number(_) => Ok(vec![as_f64(item, key)?]),
            Value::Array(xs) => xs.iter().map(|x| as_f64(x, key)).collect(),
            _ => Err(Error::Config(format!("`{key}` entries must be numbers or arrays"))),
        })
        .collect()
}

fn coefficient(field: &str, v: &Value, dims: Dims) -> Result<Vec<String>> {
    match v {
        Value::String(s) => Ok(vec![s.clone()]),
        Value::Array(items) => items
            .iter()
            .map(|i| {
                i.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| Error::Config(format!("`{field}` entries must be strings")))
            })
            .collect(),
        Value::Number(n) => Ok(vec![n.to_string()]),
        Value::Object(obj) => {
            let family = obj
                .get("family")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::MissingField(format!("{field}.family")))?;
            expand_family(field, family, &params_of(obj.get("params"))?, dims)
        }
        _ => Err(Error::Config(format!("`{field}` has an unsupported form"))),
    }
}

/// Materialize a [`ProblemSpec`] from a parsed configuration tree.
///
/// Accepts either the whole document (reads its `problem` key) or the
/// problem object itself.
pub fn build_problem(config: &Value) -> Result<ProblemSpec> {
    let problem = get(config, "problem").unwrap_or(config);
    if !problem.is_object() {
        return Err(Error::Config("`problem` must be an object".into()));
    }

    let base = match get(problem, "benchmark") {
        Some(name) => {
            let name = name
                .as_str()
                .ok_or_else(|| Error::Config("`benchmark` must be a string".into()))?;
            Some(benchmark_sources(name, &params_of(get(problem, "params"))?)?)
        }
        None => None,
    };

    let number = |key: &str, fallback: Option<f64>| -> Result<f64> {
        match get(problem, key) {
            Some(v) => as_f64(v, key),
            None => fallback.ok_or_else(|| Error::MissingField(key.into())),
        }
    };
    let integer = |key: &str, fallback: Option<usize>| -> Result<usize> {
        match get(problem, key) {
            Some(v) => as_usize(v, key),
            None => fallback.ok_or_else(|| Error::MissingField(key.into())),
        }
    };

    let horizon = number("horizon", base.as_ref().map(|b| b.horizon))?;
    let state_dim = integer("state_dim", base.as_ref().map(|b| b.state_dim))?;
    let noise_dim = integer("noise_dim", base.as_ref().map(|b| b.noise_dim))?;
    let actions = match get(problem, "actions") {
        Some(v) => vector_list(v, "actions")?,
        None => base
            .as_ref()
            .map(|b| b.actions.clone())
            .ok_or_else(|| Error::MissingField("actions".into()))?,
    };
    let impulses = match get(problem, "impulses") {
        Some(v) => vector_list(v, "impulses")?,
        None => base
            .as_ref()
            .map(|b| b.impulses.clone())
            .ok_or_else(|| Error::MissingField("impulses".into()))?,
    };
    if actions.is_empty() {
        return Err(Error::Config("action set A is empty".into()));
    }
    if impulses.is_empty() {
        return Err(Error::Config("impulse set U is empty".into()));
    }
    let dims = Dims {
        n: state_dim,
        d: noise_dim,
        m: actions[0].len(),
        q: impulses[0].len(),
    };

    let base_c = base.as_ref().map(|b| b.constants);
    let constant = |key: &str, pick: fn(&Constants) -> f64, default: Option<f64>| {
        number(key, base_c.as_ref().map(pick).or(default))
    };
    let constants = Constants {
        delta_floor: constant("delta_floor", |c| c.delta_floor, None)?,
        k_gamma: constant("k_gamma", |c| c.k_gamma, Some(1.0))?,
        growth_rho: constant("growth_rho", |c| c.growth_rho, Some(2.0))?,
        holder_varsigma: constant("holder_varsigma", |c| c.holder_varsigma, Some(1.0))?,
        lipschitz_kf: constant("lipschitz_kf", |c| c.lipschitz_kf, Some(0.0))?,
        lipschitz_c: constant("lipschitz_c", |c| c.lipschitz_c, Some(1.0))?,
    };

    let mut fields: Vec<Vec<String>> = Vec::with_capacity(COEFFICIENTS.len());
    for field in COEFFICIENTS {
        let v = match get(problem, field) {
            Some(v) => coefficient(field, v, dims)?,
            None => {
                let b = base
                    .as_ref()
                    .ok_or_else(|| Error::MissingField(field.into()))?;
                match field {
                    "drift" => b.drift.clone(),
                    "diffusion" => b.diffusion.clone(),
                    "driver" => vec![b.driver.clone()],
                    "terminal" => vec![b.terminal.clone()],
                    "cost" => vec![b.cost.clone()],
                    _ => b.impulse_map.clone(),
                }
            }
        };
        fields.push(v);
    }
    let scalar = |i: usize| -> Result<String> {
        match fields[i].as_slice() {
            [s] => Ok(s.clone()),
            _ => Err(Error::Dimension(format!(
                "`{}` must be a single expression",
                COEFFICIENTS[i]
            ))),
        }
    };

    let src = Sources {
        horizon,
        state_dim,
        noise_dim,
        drift: fields[0].clone(),
        diffusion: fields[1].clone(),
        driver: scalar(2)?,
        terminal: scalar(3)?,
        cost: scalar(4)?,
        impulse_map: fields[5].clone(),
        actions,
        impulses,
        constants,
    };
    ProblemSpec::from_sources(&src)
}

/// The `grid` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub nodes: Vec<usize>,
    /// Number of time steps; `None` picks the smallest count allowed by the
    /// CFL bound.
    pub time_steps: Option<usize>,
    /// Untrusted boundary layer, in nodes.
    pub margin: Option<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            lo: vec![-2.0],
            hi: vec![2.0],
            nodes: vec![81],
            time_steps: None,
            margin: None,
        }
    }
}

/// The `mc` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    pub degree: usize,
    pub antithetic: bool,
    pub t0: f64,
    pub x0: Vec<f64>,
}

impl Default for McSection {
    fn default() -> Self {
        McSection {
            paths: 10_000,
            steps: 50,
            seed: 42,
            degree: 2,
            antithetic: false,
            t0: 0.0,
            x0: vec![0.0],
        }
    }
}

/// The `solver` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    /// `upper`, `lower` or `both`.
    pub ordering: String,
    pub tol: f64,
    pub k: usize,
    pub validation_tol: f64,
    pub validation_samples: usize,
    /// Sample points for the DPP residual check.
    pub dpp_samples: usize,
    /// Constant for moment and intervention-count bounds.
    pub bound_c: f64,
    /// Declared scheme error constant for DPP residuals.
    pub c_scheme: f64,
    /// Replications for the comparison test.
    pub replications: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            ordering: "lower".into(),
            tol: 1e-12,
            k: 8,
            validation_tol: 0.0,
            validation_samples: 512,
            dpp_samples: 10,
            bound_c: 10.0,
            c_scheme: 1.0,
            replications: 20,
        }
    }
}

/// Whole configuration document.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub raw: Value,
    pub problem: ProblemSpec,
    pub grid: GridConfig,
    pub mc: McSection,
    pub solver: SolverSection,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Config> {
        let raw: Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        Config::from_value(raw)
    }

    pub fn from_value(raw: Value) -> Result<Config> {
        if get(&raw, "problem").is_none() {
            return Err(Error::MissingField("problem".into()));
        }
        let problem = build_problem(&raw)?;
        let section = |key: &str| get(&raw, key).cloned().unwrap_or(Value::Object(Default::default()));
        let bad = |key: &str, e: serde_json::Error| Error::Config(format!("`{key}`: {e}"));
        let grid: GridConfig = serde_json::from_value(section("grid")).map_err(|e| bad("grid", e))?;
        let mc: McSection = serde_json::from_value(section("mc")).map_err(|e| bad("mc", e))?;
        let solver: SolverSection =
            serde_json::from_value(section("solver")).map_err(|e| bad("solver", e))?;
        Ok(Config {
            raw,
            problem,
            grid,
            mc,
            solver,
        })
    }
}
