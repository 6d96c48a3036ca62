//! Sources of the relative camera motion between consecutive frames.

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::noise::{check_noise_scale, perturb_odometry, NoiseConfig};
use crate::geometry::{relative_transform, Pose6, RigidTransform};

/// What a provider may look at to estimate the motion from `t−1` to `t`.
pub struct OdometryQuery<'a> {
    pub prev_pose: &'a Pose6,
    pub pose: &'a Pose6,
    /// Refined output of the previous step.
    pub prev_refined: &'a Array3<f32>,
    /// Coarse inpainting of the current frame.
    pub coarse: &'a Array3<f32>,
    pub index: usize,
}

pub trait OdometryProvider {
    fn name(&self) -> String;
    /// Transform mapping points of camera `t−1` into camera `t`.
    fn estimate(&mut self, query: &OdometryQuery) -> Result<RigidTransform>;
}

/// Exact relative motion from the recorded poses.
#[derive(Debug, Clone, Default)]
pub struct GroundTruthOdometry;

impl OdometryProvider for GroundTruthOdometry {
    fn name(&self) -> String {
        "groundtruth".into()
    }

    fn estimate(&mut self, q: &OdometryQuery) -> Result<RigidTransform> {
        Ok(relative_transform(q.prev_pose, q.pose))
    }
}

/// Recorded motion with Gaussian 6-DoF noise of scale `p_n`.
#[derive(Debug, Clone)]
pub struct NoisyOdometry {
    pub p_n: f64,
    pub config: NoiseConfig,
    rng: ChaCha8Rng,
}

impl NoisyOdometry {
    pub fn new(p_n: f64, config: NoiseConfig, seed: u64) -> Result<Self> {
        check_noise_scale(p_n)?;
        Ok(Self {
            p_n,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

impl OdometryProvider for NoisyOdometry {
    fn name(&self) -> String {
        format!("groundtruth+noise(p_n={})", self.p_n)
    }

    fn estimate(&mut self, q: &OdometryQuery) -> Result<RigidTransform> {
        perturb_odometry(&relative_transform(q.prev_pose, q.pose), self.p_n, &self.config, &mut self.rng)
    }
}

/// Placeholder for an image-based estimator fed the previous refined frame
/// and the current coarse frame. No estimator ships, so every call fails and
/// the pipeline falls back to the identity.
#[derive(Debug, Clone, Default)]
pub struct ExternalOdometry;

impl OdometryProvider for ExternalOdometry {
    fn name(&self) -> String {
        "external".into()
    }

    fn estimate(&mut self, q: &OdometryQuery) -> Result<RigidTransform> {
        Err(Error::Config(format!(
            "no external odometry estimator is configured (frame {}, {}×{} input)",
            q.index,
            q.coarse.dim().1,
            q.coarse.dim().0
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum OdometryMode {
    GroundTruth,
    Noisy { p_n: f64 },
    External,
}

impl OdometryMode {
    pub fn provider(&self, config: &NoiseConfig, seed: u64) -> Result<Box<dyn OdometryProvider>> {
        Ok(match *self {
            Self::GroundTruth => Box::new(GroundTruthOdometry),
            Self::Noisy { p_n } => Box::new(NoisyOdometry::new(p_n, config.clone(), seed)?),
            Self::External => Box::new(ExternalOdometry),
        })
    }
}
