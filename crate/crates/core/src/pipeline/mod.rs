//! Streaming inference: one frame at a time, coarse inpainting, warping of
//! the previous output, gated refinement, depth completion.

pub mod odometry;

use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{Device, Tensor};
use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::io::{save_sequence, sequence_dir};
use crate::dataset::{signed_to_u8, ClassConfig, Frame, SequencePair};
use crate::error::{Error, Result};
use crate::evaluation::noise::{perturb_depth, perturb_mask, NoiseConfig};
use crate::geometry::{warp_forward, CameraModel, Pose6, RigidTransform, MAX_DEPTH_M};
use crate::models::{GateMode, ModelSet};
use crate::nn::{hw_to_tensor, hwc_to_tensor, tensor_to_hw, tensor_to_hwc};

pub use odometry::{
    ExternalOdometry, GroundTruthOdometry, NoisyOdometry, OdometryMode, OdometryProvider, OdometryQuery,
};

/// Previous refined image and completed depth, with the pose they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct PreviousOutput {
    pub rgb: Array3<f32>,
    pub depth: Array2<f32>,
    pub pose: Pose6,
}

/// Recurrent memory of one stream; empty before the first frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecurrentState {
    pub prev: Option<PreviousOutput>,
}

impl RecurrentState {
    pub fn is_empty(&self) -> bool {
        self.prev.is_none()
    }

    pub fn reset(&mut self) {
        self.prev = None;
    }
}

/// Outputs of one pipeline step. Images are `H×W×3` in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub coarse: Array3<f32>,
    pub refined: Array3<f32>,
    pub depth: Array2<f32>,
    /// Fusion gate at 1/8 resolution.
    pub gate: Array2<f32>,
    pub warped_prev: Array3<f32>,
    pub visibility: Array2<u8>,
    /// Transform used to warp the previous output (identity on the first frame).
    pub transform: RigidTransform,
    pub elapsed_ms: f64,
}

/// Previous output warped into the current view as `1×3×H×W` image and
/// `1×1×H×W` visibility tensors, plus the raw warp result.
pub fn warp_previous(
    prev_rgb: &Array3<f32>,
    prev_depth: &Array2<f32>,
    camera: &CameraModel,
    transform: &RigidTransform,
    device: &Device,
) -> Result<(Tensor, Tensor, Array3<f32>, Array2<u8>)> {
    let warp = warp_forward(prev_rgb.view(), prev_depth.view(), camera, transform, MAX_DEPTH_M)?;
    let vis = warp.visibility.mapv(|v| v as f32);
    Ok((
        hwc_to_tensor(&warp.image, device)?,
        hw_to_tensor(&vis, device)?,
        warp.image,
        warp.visibility,
    ))
}

/// One inference stream over a fixed set of networks.
pub struct Pipeline<'m> {
    models: &'m ModelSet,
    camera: CameraModel,
    gate_mode: GateMode,
    device: Device,
    pub state: RecurrentState,
}

impl<'m> Pipeline<'m> {
    pub fn new(models: &'m ModelSet, camera: CameraModel, gate_mode: GateMode, device: &Device) -> Self {
        Self {
            models,
            camera,
            gate_mode,
            device: device.clone(),
            state: RecurrentState::default(),
        }
    }

    pub fn reset(&mut self) {
        self.state.reset();
    }

    /// Processes the next frame of the stream. The previous output is warped
    /// with the provider's transform; a failing provider falls back to the
    /// identity with a warning.
    pub fn step(&mut self, frame: &Frame, odometry: &mut dyn OdometryProvider) -> Result<StepOutput> {
        let start = Instant::now();
        let (h, w) = frame.dims();
        if (self.camera.width, self.camera.height) != (w, h) {
            return Err(Error::Contract(format!(
                "frame {} is {w}×{h} but the camera is {}×{}",
                frame.index, self.camera.width, self.camera.height
            )));
        }
        let dev = &self.device;
        let image = hwc_to_tensor(&frame.rgb_signed(), dev)?;
        let mask = hw_to_tensor(&frame.mask.mapv(|m| m as f32), dev)?;
        let depth_in = hw_to_tensor(&frame.depth, dev)?;

        let coarse_t = self.models.coarse.forward(&image, &mask)?.detach();
        let coarse = tensor_to_hwc(&coarse_t, 0)?;

        let (transform, warped_t, vis_t, warped_prev, visibility) = match &self.state.prev {
            None => (
                RigidTransform::identity(),
                Tensor::zeros((1, 3, h, w), candle_core::DType::F32, dev)?,
                Tensor::zeros((1, 1, h, w), candle_core::DType::F32, dev)?,
                Array3::zeros((h, w, 3)),
                Array2::zeros((h, w)),
            ),
            Some(prev) => {
                let query = OdometryQuery {
                    prev_pose: &prev.pose,
                    pose: &frame.pose,
                    prev_refined: &prev.rgb,
                    coarse: &coarse,
                    index: frame.index,
                };
                let transform = odometry.estimate(&query).unwrap_or_else(|e| {
                    log::warn!("odometry provider failed at frame {}: {e}; using identity", frame.index);
                    RigidTransform::identity()
                });
                let (wt, vt, wa, va) = warp_previous(&prev.rgb, &prev.depth, &self.camera, &transform, dev)?;
                (transform, wt, vt, wa, va)
            }
        };

        let refined = self.models.refine.forward(&coarse_t, &mask, &warped_t, &vis_t, self.gate_mode)?;
        let refined_t = refined.image.detach();
        let depth_t = self.models.depth.forward(&refined_t, &depth_in, &mask)?.detach();

        let out = StepOutput {
            refined: tensor_to_hwc(&refined_t, 0)?,
            depth: tensor_to_hw(&depth_t, 0)?,
            gate: tensor_to_hw(&refined.gate.detach(), 0)?,
            coarse,
            warped_prev,
            visibility,
            transform,
            elapsed_ms: 0.0,
        };
        self.state.prev = Some(PreviousOutput {
            rgb: out.refined.clone(),
            depth: out.depth.clone(),
            pose: frame.pose,
        });
        Ok(StepOutput {
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            ..out
        })
    }
}

/// Which input a stream corrupts before feeding it to the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Mask,
    Depth,
    Odometry,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [Self::Mask, Self::Depth, Self::Odometry];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mask => "mask",
            Self::Depth => "depth",
            Self::Odometry => "odometry",
        }
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown noise kind `{s}` (expected mask, depth or odometry)")))
    }
}

#[derive(Debug, Clone)]
pub struct StreamOptions {
    pub odometry: OdometryMode,
    pub gate_mode: GateMode,
    /// Corruption of mask or depth inputs; odometry noise goes through `odometry`.
    pub input_noise: Option<(NoiseKind, f64)>,
    pub noise: NoiseConfig,
    pub seed: u64,
}

impl Default for StreamOptions {
    fn default() -> Self {
        Self {
            odometry: OdometryMode::GroundTruth,
            gate_mode: GateMode::Learned,
            input_noise: None,
            noise: NoiseConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub frames: usize,
    pub per_frame_ms: Vec<f64>,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub median_ms: f64,
}

impl TimingStats {
    pub fn from_samples(per_frame_ms: Vec<f64>) -> Self {
        let n = per_frame_ms.len();
        let mean = if n == 0 { 0.0 } else { per_frame_ms.iter().sum::<f64>() / n as f64 };
        let var = if n == 0 {
            0.0
        } else {
            per_frame_ms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64
        };
        let mut sorted = per_frame_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let median = if n == 0 { 0.0 } else { sorted[n / 2] };
        Self {
            frames: n,
            per_frame_ms,
            mean_ms: mean,
            std_ms: var.sqrt(),
            median_ms: median,
        }
    }
}

/// All step outputs of a stream plus the frames actually fed to the networks.
pub struct StreamResult {
    pub inputs: Vec<Frame>,
    pub outputs: Vec<StepOutput>,
    pub timing: TimingStats,
}

impl StreamResult {
    /// Inputs as the dynamic side and predictions as the static side, with
    /// dynamic labels replaced by the ignore label.
    pub fn to_sequence(&self, id: &str, rig: crate::dataset::CameraRig, classes: &ClassConfig) -> SequencePair {
        let static_frames = self
            .inputs
            .iter()
            .zip(&self.outputs)
            .map(|(f, o)| Frame {
                rgb: o.refined.mapv(signed_to_u8),
                depth: o.depth.mapv(|d| d.clamp(0.0, 1.0)),
                semantic: f.semantic.mapv(|s| {
                    if classes.dynamic_ids.contains(&s) {
                        classes.ignore_id
                    } else {
                        s
                    }
                }),
                mask: Array2::zeros(f.dims()),
                pose: f.pose,
                index: f.index,
            })
            .collect();
        SequencePair {
            id: id.to_string(),
            dynamic_frames: self.inputs.clone(),
            static_frames,
            rig,
        }
    }
}

/// Runs the pipeline over the dynamic side of `pair` from an empty state.
pub fn run_stream(
    pair: &SequencePair,
    models: &ModelSet,
    classes: &ClassConfig,
    options: &StreamOptions,
    device: &Device,
) -> Result<StreamResult> {
    let camera = pair.rig.camera()?;
    let mut pipeline = Pipeline::new(models, camera, options.gate_mode, device);
    let mut provider = options.odometry.provider(&options.noise, options.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ 0x6e6f_6973_6500);
    let mut inputs = Vec::with_capacity(pair.len());
    let mut outputs = Vec::with_capacity(pair.len());
    for frame in &pair.dynamic_frames {
        let mut input = frame.clone();
        match options.input_noise {
            Some((NoiseKind::Mask, p)) if p > 0.0 => {
                input.mask = perturb_mask(&frame.mask, p, &options.noise, &mut rng)?;
            }
            Some((NoiseKind::Depth, p)) if p > 0.0 => {
                input.depth = perturb_depth(&frame.depth, &frame.semantic, classes, p, &options.noise, &mut rng)?;
            }
            _ => {}
        }
        outputs.push(pipeline.step(&input, provider.as_mut())?);
        inputs.push(input);
    }
    let timing = TimingStats::from_samples(outputs.iter().map(|o| o.elapsed_ms).collect());
    Ok(StreamResult {
        inputs,
        outputs,
        timing,
    })
}

pub const TIMING_FILE: &str = "timing.json";

/// Writes the stream in the dataset layout under `<root>/<split>/<id>` plus
/// `timing.json`, and returns the sequence directory.
pub fn save_stream(
    root: &Path,
    split: &str,
    result: &StreamResult,
    id: &str,
    rig: crate::dataset::CameraRig,
    classes: &ClassConfig,
) -> Result<PathBuf> {
    let dir = save_sequence(root, split, &result.to_sequence(id, rig, classes))?;
    debug_assert_eq!(dir, sequence_dir(root, split, id));
    let path = dir.join(TIMING_FILE);
    let text = serde_json::to_string_pretty(&result.timing)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(dir)
}
