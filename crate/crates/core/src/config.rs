//! One versioned configuration schema holding every numeric default.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{AugmentConfig, ClassConfig, ToySceneConfig};
use crate::error::{Error, Result};
use crate::evaluation::NoiseConfig;
use crate::losses::LossWeights;
use crate::models::ModelConfig;
use crate::training::{Stage, TeacherForcingConfig, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Hex SHA-256 of the compact JSON serialization of `value`.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config types serialize");
    hex::encode(Sha256::digest(&json))
}

/// Number of generated sequences per split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 4,
            val: 1,
            test: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Noise scales visited by sweeps.
    pub noise_grid: Vec<f64>,
    /// Compute a Fréchet distance over predicted vs. ground-truth frames.
    pub frechet: bool,
    /// Seed of the random embedding backbone used when no cached weights exist.
    pub embedder_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            noise_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
            frechet: true,
            embedder_seed: 11,
        }
    }
}

/// Root of the configuration file (TOML). Every section may be omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    pub seed: u64,
    pub classes: ClassConfig,
    pub toy: ToySceneConfig,
    pub splits: SplitSizes,
    pub augment: AugmentConfig,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub teacher_forcing: TeacherForcingConfig,
    pub train: TrainConfig,
    pub noise: NoiseConfig,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            classes: ClassConfig::default(),
            toy: ToySceneConfig::default(),
            splits: SplitSizes::default(),
            augment: AugmentConfig::default(),
            model: ModelConfig::default(),
            loss: LossWeights::default(),
            teacher_forcing: TeacherForcingConfig::default(),
            train: TrainConfig::default(),
            noise: NoiseConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.classes.validate()?;
        self.toy.validate()?;
        self.augment.validate()?;
        self.model.validate()?;
        self.loss.validate()?;
        self.teacher_forcing.validate()?;
        self.train.validate()?;
        self.noise.validate()?;
        for &p in &self.eval.noise_grid {
            crate::evaluation::noise::check_noise_scale(p)?;
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hash_json(self)
    }

    /// Small settings for quick, single-sequence overfitting runs.
    pub fn overfit_preset() -> Self {
        let mut cfg = Self::default();
        cfg.model.model_scale = 0.0625;
        cfg.splits = SplitSizes {
            train: 1,
            val: 1,
            test: 1,
        };
        cfg.train.batch_size = 1;
        cfg.train.augment = false;
        cfg.train.optimizer.learning_rate = 1e-3;
        cfg.train.joint_lr_factor = 0.1;
        cfg.train.patience = 1_000;
        cfg
    }

    /// Generator steps per stage for the overfit preset, 2000 in total.
    pub fn overfit_schedule() -> [(Stage, u64); 4] {
        [
            (Stage::Depth, 100),
            (Stage::Coarse, 1_300),
            (Stage::Refine, 200),
            (Stage::Joint, 400),
        ]
    }
}
