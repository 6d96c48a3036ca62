use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::Serialize;

pub const RUN_MANIFEST: &str = "run.json";

/// Record of one command invocation, written last.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config_hash: String,
    pub seed: u64,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub version: String,
    /// Package version plus a short hash of command, config and seed.
    pub artifact_version: String,
    pub outputs: Vec<PathBuf>,
}

pub fn now_unix_s() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl RunManifest {
    pub fn new(command: &str, config_hash: &str, seed: u64, started_unix_s: f64) -> Self {
        let version = env!("CARGO_PKG_VERSION").to_string();
        let id = dynafill::config::hash_json(&(command, config_hash, seed));
        Self {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config_hash: config_hash.to_string(),
            seed,
            started_unix_s,
            finished_unix_s: 0.0,
            artifact_version: format!("{version}-g{}", &id[..12]),
            version,
            outputs: Vec::new(),
        }
    }

    /// Checks every declared output exists, then writes `<out>/run.json`.
    pub fn finish(mut self, out: &Path) -> Result<PathBuf> {
        for p in &self.outputs {
            if !p.exists() {
                bail!("declared output {} was not written", p.display());
            }
        }
        self.finished_unix_s = now_unix_s();
        let path = out.join(RUN_MANIFEST);
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
