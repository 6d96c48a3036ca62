use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelSet, NetworkKind};
use crate::config::hash_json;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FORMAT: u32 = 1;

/// Sidecar describing a checkpoint directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub model_scale: f64,
    pub model_config: ModelConfig,
    /// Hash of `model_config`; must match the model a checkpoint is loaded into.
    pub model_hash: String,
    /// Hash of the full run configuration that produced the checkpoint.
    pub config_hash: String,
    pub stage: String,
    pub networks: Vec<NetworkKind>,
    pub step: u64,
    pub epoch: u64,
    pub best_validation: Option<f64>,
    /// Recent refinement-L1 values feeding the teacher-forcing schedule.
    pub teacher_forcing_window: Vec<f64>,
    /// Validation rounds since `best_validation` last improved.
    #[serde(default)]
    pub epochs_without_improvement: u64,
}

impl CheckpointManifest {
    pub fn new(model_config: &ModelConfig, config_hash: &str, stage: &str, networks: Vec<NetworkKind>) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT,
            model_scale: model_config.model_scale,
            model_config: model_config.clone(),
            model_hash: hash_json(model_config),
            config_hash: config_hash.to_string(),
            stage: stage.to_string(),
            networks,
            step: 0,
            epoch: 0,
            best_validation: None,
            teacher_forcing_window: Vec::new(),
            epochs_without_improvement: 0,
        }
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if manifest.format_version != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "{}: format version {} (expected {CHECKPOINT_FORMAT})",
                path.display(),
                manifest.format_version
            )));
        }
        Ok(manifest)
    }
}

pub fn network_file(dir: &Path, kind: NetworkKind) -> PathBuf {
    dir.join(format!("{}.safetensors", kind.name()))
}

/// Writes the manifest plus one safetensors file per listed network.
pub fn save_checkpoint(dir: &Path, manifest: &CheckpointManifest, models: &ModelSet) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for &kind in &manifest.networks {
        models.params(kind).save(&network_file(dir, kind))?;
    }
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Loads `networks` (default: all networks in the manifest) into `models`
/// after checking that the architecture hash matches.
pub fn load_checkpoint(dir: &Path, models: &ModelSet, networks: Option<&[NetworkKind]>) -> Result<CheckpointManifest> {
    let manifest = CheckpointManifest::read(dir)?;
    let expected = hash_json(&models.config);
    if manifest.model_hash != expected {
        return Err(Error::Checkpoint(format!(
            "{}: model hash {} does not match configured model {expected} (scale {} vs {})",
            dir.display(),
            manifest.model_hash,
            manifest.model_scale,
            models.config.model_scale
        )));
    }
    let wanted = networks.unwrap_or(&manifest.networks);
    for kind in wanted {
        if !manifest.networks.contains(kind) {
            return Err(Error::Checkpoint(format!(
                "{} has no `{}` network",
                dir.display(),
                kind.name()
            )));
        }
        models.params(*kind).load(&network_file(dir, *kind))?;
    }
    Ok(manifest)
}
