use std::path::{Path, PathBuf};

use impulse_game::model::Config;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// SHA-256 of the effective configuration (after overrides), compact JSON.
    pub config_hash: Option<String>,
    pub spec: Value,
    pub grid: Value,
    pub seeds: Value,
    pub threads: usize,
    pub wall_clock_seconds: f64,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(command: &str, config: Option<&Config>) -> Self {
        let (config_hash, spec, grid, seeds) = match config {
            Some(c) => {
                let p = &c.problem;
                (
                    Some(sha256_hex(c.raw.to_string().as_bytes())),
                    json!({
                        "horizon": p.horizon,
                        "state_dim": p.state_dim,
                        "noise_dim": p.noise_dim,
                        "actions": p.actions.len(),
                        "impulses": p.impulses.len(),
                        "constants": p.constants,
                    }),
                    serde_json::to_value(&c.grid).unwrap_or(Value::Null),
                    json!({ "mc": c.mc.seed }),
                )
            }
            None => (None, Value::Null, Value::Null, Value::Null),
        };
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash,
            spec,
            grid,
            seeds,
            threads: rayon::current_num_threads(),
            wall_clock_seconds: 0.0,
            files: Vec::new(),
        }
    }

    /// Record a file already written under `out`.
    pub fn add(&mut self, out: &Path, path: &Path) -> std::io::Result<()> {
        let bytes = std::fs::read(path)?;
        let rel: PathBuf = path.strip_prefix(out).unwrap_or(path).to_path_buf();
        self.files.push(FileEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }
}
