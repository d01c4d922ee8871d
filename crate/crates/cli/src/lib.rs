//! Batch front end for the `impulse-game` solvers.
//!
//! Every subcommand reads one JSON configuration, applies the scalar
//! command-line overrides, writes its artifacts under `--out` and finishes
//! with a `manifest.json` listing each produced file with its SHA-256.

mod commands;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use impulse_game::model::Config;
use impulse_game::Error;

pub use manifest::{sha256_hex, FileEntry, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Name of the environment variable that fixes the worker count.
pub const THREADS_ENV: &str = "SOLVER_THREADS";

#[derive(Debug, Parser)]
#[command(name = "impulse-game", version, about = "Impulse-versus-continuous stochastic differential games")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `upper`, `lower` or `both`.
    #[arg(long, global = true)]
    pub ordering: Option<String>,
    /// Truncation level for `truncate`, budget for the truncation checks.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Nodes per dimension; a single value applies to every dimension.
    #[arg(long, global = true, value_delimiter = ',')]
    pub grid_nodes: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub time_steps: Option<usize>,
    #[arg(long, global = true)]
    pub paths: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Spot-check the standing assumptions on sampled points.
    Validate,
    /// Solve the grid equation and extract feedback policies.
    Solve,
    /// Solve the truncated family V^0..V^k and report the gaps to V^∞.
    Truncate,
    /// Simulate paths under the configured or extracted policies.
    Simulate,
    /// Monte Carlo value of the configured or extracted policies.
    Evaluate,
    /// Run the full verification suite.
    Verify,
    /// Convert binary grid dumps to CSV.
    Export {
        /// Dumps to convert; defaults to every `*.bin` under `--out`.
        files: Vec<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Solve => "solve",
            Command::Truncate => "truncate",
            Command::Simulate => "simulate",
            Command::Evaluate => "evaluate",
            Command::Verify => "verify",
            Command::Export { .. } => "export",
        }
    }
}

/// Everything that ends a run early.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Solver(Error),
    /// The run completed but a check failed.
    Validation(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Solver(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Solver(e.into())
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Validation(_) => EXIT_VALIDATION,
            Failure::Solver(e) if e.is_numeric() => EXIT_NUMERIC,
            Failure::Solver(_) => EXIT_USAGE,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Solver(e) => write!(f, "{e}"),
            Failure::Validation(m) => write!(f, "{m}"),
        }
    }
}

/// Size the global rayon pool from [`THREADS_ENV`]. Only the first call in a
/// process has an effect.
pub fn init_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Load the configuration named by `--config` and apply the overrides.
pub fn load_config(common: &Common) -> Result<Config, Failure> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("--config is required".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: invalid JSON: {e}", path.display())))?;
    apply_overrides(&mut raw, common)?;
    Ok(Config::from_value(raw)?)
}

fn apply_overrides(raw: &mut serde_json::Value, c: &Common) -> Result<(), Failure> {
    use serde_json::{json, Value};
    let obj = raw
        .as_object_mut()
        .ok_or_else(|| Failure::Usage("configuration must be a JSON object".into()))?;
    let dim = raw_state_dim(obj);
    let mut set = |section: &str, key: &str, v: Value| {
        let s = obj.entry(section).or_insert_with(|| json!({}));
        if !s.is_object() {
            *s = json!({});
        }
        s[key] = v;
    };
    if let Some(seed) = c.seed {
        set("mc", "seed", json!(seed));
    }
    if let Some(paths) = c.paths {
        set("mc", "paths", json!(paths));
    }
    if let Some(o) = &c.ordering {
        if !matches!(o.as_str(), "upper" | "lower" | "both") {
            return Err(Failure::Usage(format!("--ordering must be upper, lower or both, got `{o}`")));
        }
        set("solver", "ordering", json!(o));
    }
    if let Some(k) = c.k {
        set("solver", "k", json!(k));
    }
    if let Some(m) = c.time_steps {
        set("grid", "time_steps", json!(m));
    }
    if let Some(nodes) = &c.grid_nodes {
        let nodes = match nodes.as_slice() {
            [one] => vec![*one; dim],
            many => many.to_vec(),
        };
        set("grid", "nodes", json!(nodes));
    }
    Ok(())
}

fn raw_state_dim(obj: &serde_json::Map<String, serde_json::Value>) -> usize {
    obj.get("grid")
        .and_then(|g| g.get("lo"))
        .and_then(|lo| lo.as_array())
        .map(Vec::len)
        .or_else(|| {
            obj.get("problem")
                .and_then(|p| p.get("state_dim"))
                .and_then(|n| n.as_u64())
                .map(|n| n as usize)
        })
        .unwrap_or(1)
}

/// Parse `argv` (including the program name) and run it; returns the exit
/// code. Errors go to standard error.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match init_threads().and_then(|()| commands::execute(&cli)) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("impulse-game {}: {f}", cli.command.name());
            f.exit_code()
        }
    }
}
