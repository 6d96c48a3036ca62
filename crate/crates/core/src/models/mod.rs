//! The four trainable networks and their checkpoint format.

pub mod blocks;
pub mod checkpoint;
pub mod networks;

use candle_core::{DType, Device};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use networks::{
    gate_fuse, CoarseGenerator, DepthCompletionNet, GateMode, PatchDiscriminator, RefineOutput, RefinementNet,
};

/// Architecture hyper-parameters. Channel widths are the reference widths
/// multiplied by `model_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub model_scale: f64,
    /// Pre-activation bottleneck depth for the coarse and refinement encoders.
    pub coarse_encoder_depth: usize,
    /// Basic-block depth for the depth-completion encoder.
    pub depth_encoder_depth: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            model_scale: 0.25,
            coarse_encoder_depth: 26,
            depth_encoder_depth: 18,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.model_scale > 0.0 && self.model_scale <= 4.0) {
            return Err(Error::Config(format!("model_scale {} outside (0, 4]", self.model_scale)));
        }
        blocks::bottleneck_layout(self.coarse_encoder_depth)?;
        blocks::basic_layout(self.depth_encoder_depth)?;
        Ok(())
    }
}

/// Names of the networks, also used as checkpoint file stems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    Coarse,
    Refine,
    Depth,
    Discriminator,
}

impl NetworkKind {
    pub const ALL: [NetworkKind; 4] = [Self::Coarse, Self::Refine, Self::Depth, Self::Discriminator];

    pub fn name(self) -> &'static str {
        match self {
            Self::Coarse => "coarse",
            Self::Refine => "refine",
            Self::Depth => "depth",
            Self::Discriminator => "discriminator",
        }
    }
}

/// All networks with one parameter store each.
pub struct ModelSet {
    pub config: ModelConfig,
    pub coarse: CoarseGenerator,
    pub refine: RefinementNet,
    pub depth: DepthCompletionNet,
    pub discriminator: PatchDiscriminator,
    pub coarse_params: ParamStore,
    pub refine_params: ParamStore,
    pub depth_params: ParamStore,
    pub discriminator_params: ParamStore,
}

impl ModelSet {
    pub fn new(config: &ModelConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let store = |offset: u64| ParamStore::new(seed.wrapping_mul(4).wrapping_add(offset), dtype, device);
        let mut coarse_params = store(0);
        let mut refine_params = store(1);
        let mut depth_params = store(2);
        let mut discriminator_params = store(3);
        Ok(Self {
            coarse: CoarseGenerator::new(&mut coarse_params, config)?,
            refine: RefinementNet::new(&mut refine_params, config)?,
            depth: DepthCompletionNet::new(&mut depth_params, config)?,
            discriminator: PatchDiscriminator::new(&mut discriminator_params, config)?,
            config: config.clone(),
            coarse_params,
            refine_params,
            depth_params,
            discriminator_params,
        })
    }

    pub fn params(&self, kind: NetworkKind) -> &ParamStore {
        match kind {
            NetworkKind::Coarse => &self.coarse_params,
            NetworkKind::Refine => &self.refine_params,
            NetworkKind::Depth => &self.depth_params,
            NetworkKind::Discriminator => &self.discriminator_params,
        }
    }
}
