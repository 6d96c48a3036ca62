//! Staged training: per-network pretraining, joint fine-tuning, alternating
//! adversarial updates, loss-aware teacher forcing and early stopping.

pub mod schedule;

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use schedule::{teacher_forcing_prob, TeacherForcingConfig, TeacherForcingState};

use crate::config::Config;
use crate::dataset::{AugmentParams, Frame, SequencePair};
use crate::error::{Error, Result};
use crate::geometry::{relative_transform, CameraModel, RigidTransform};
use crate::losses::{
    gan_d_loss, gan_g_loss, l1, masked_l1, perceptual_from_features, smoothness_loss, style_from_features,
    total_loss, FeatureExtractor, LossBreakdown, LossTerms, VggFeatures,
};
use crate::models::checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
use crate::models::{GateMode, ModelSet, NetworkKind};
use crate::nn::{hw_to_tensor, hwc_to_tensor, tensor_to_hw, tensor_to_hwc, Adam, AdamConfig};
use crate::pipeline::warp_previous;

/// Training stage. The first three pretrain one sub-network each; `Joint`
/// fine-tunes everything starting from their best checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Depth,
    Coarse,
    Refine,
    Joint,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Self::Depth, Self::Coarse, Self::Refine, Self::Joint];

    pub fn name(self) -> &'static str {
        match self {
            Self::Depth => "depth",
            Self::Coarse => "coarse",
            Self::Refine => "refine",
            Self::Joint => "joint",
        }
    }

    /// Networks updated (and checkpointed) in this stage.
    pub fn networks(self) -> Vec<NetworkKind> {
        match self {
            Self::Depth => vec![NetworkKind::Depth],
            Self::Coarse => vec![NetworkKind::Coarse],
            Self::Refine => vec![NetworkKind::Refine, NetworkKind::Discriminator],
            Self::Joint => NetworkKind::ALL.to_vec(),
        }
    }

    fn adversarial(self) -> bool {
        matches!(self, Self::Refine | Self::Joint)
    }

    fn recurrent(self) -> bool {
        matches!(self, Self::Refine | Self::Joint)
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}` (expected depth, coarse, refine or joint)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Multiplies the learning rate during joint fine-tuning.
    pub joint_lr_factor: f64,
    /// Validation rounds (one per epoch) without improvement before stopping.
    pub patience: u64,
    /// Generator steps after which the stage ends.
    pub max_steps: u64,
    pub max_epochs: u64,
    /// Number of previous frames fed back; only 1 is supported.
    pub temporal_order: usize,
    pub augment: bool,
    /// Seed of the random perceptual backbone used when no cached VGG-16 exists.
    pub backbone_seed: u64,
    /// Continue from `<out>/<stage>/last` if it exists.
    pub resume: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Joint,
            batch_size: 4,
            optimizer: AdamConfig::default(),
            joint_lr_factor: 1.0,
            patience: 10,
            max_steps: 20_000,
            max_epochs: 1_000,
            temporal_order: 1,
            augment: true,
            backbone_seed: 7,
            resume: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !(o.learning_rate > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {o:?}")));
        }
        if !(self.joint_lr_factor > 0.0 && self.joint_lr_factor.is_finite()) {
            return Err(Error::Config(format!(
                "train.joint_lr_factor must be positive, got {}",
                self.joint_lr_factor
            )));
        }
        if self.patience == 0 {
            return Err(Error::Config("train.patience must be at least 1".into()));
        }
        if self.temporal_order != 1 {
            return Err(Error::Config(format!(
                "train.temporal_order must be 1, got {}",
                self.temporal_order
            )));
        }
        Ok(())
    }
}

/// One training example: frame `t ≥ 1` of sequence `seq`, with frame `t − 1`
/// providing the recurrent feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleRef {
    pub seq: usize,
    pub t: usize,
}

pub fn enumerate_samples(data: &[SequencePair]) -> Vec<SampleRef> {
    data.iter()
        .enumerate()
        .flat_map(|(seq, p)| (1..p.len()).map(move |t| SampleRef { seq, t }))
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepOptions {
    /// Overrides the teacher-forcing coin for every sample.
    pub force_tf: Option<bool>,
    /// Overrides `train.augment`.
    pub augment: Option<bool>,
}

/// Result of one alternating update.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub breakdown: LossBreakdown,
    pub d_loss: Option<f64>,
    /// Probability used for this batch's coins.
    pub p_tf: f64,
    pub teacher_forced: Vec<bool>,
    /// Frame `t − 1` content fed back for each sample, before warping.
    pub feedback_rgb: Vec<Array3<f32>>,
    pub feedback_depth: Vec<Array2<f32>>,
}

/// Arrays of one prepared sample.
struct Prepared {
    image: Array3<f32>,
    mask: Array2<f32>,
    depth: Array2<f32>,
    gt_rgb: Array3<f32>,
    gt_depth: Array2<f32>,
    warped: Array3<f32>,
    visibility: Array2<f32>,
    feedback_rgb: Array3<f32>,
    feedback_depth: Array2<f32>,
    teacher_forced: bool,
}

struct Batch {
    image: Tensor,
    mask: Tensor,
    depth: Tensor,
    gt_rgb: Tensor,
    gt_depth: Tensor,
    warped: Tensor,
    visibility: Tensor,
}

fn stack3(xs: &[&Array3<f32>], dev: &Device) -> Result<Tensor> {
    let ts = xs.iter().map(|x| hwc_to_tensor(x, dev)).collect::<Result<Vec<_>>>()?;
    Ok(Tensor::cat(&ts, 0)?)
}

fn stack2(xs: &[&Array2<f32>], dev: &Device) -> Result<Tensor> {
    let ts = xs.iter().map(|x| hw_to_tensor(x, dev)).collect::<Result<Vec<_>>>()?;
    Ok(Tensor::cat(&ts, 0)?)
}

fn mask_f32(f: &Frame) -> Array2<f32> {
    f.mask.mapv(|m| m as f32)
}

/// Relative motion between two frames as seen in (possibly mirrored) images.
fn frame_motion(from: &Frame, to: &Frame, flip: bool) -> RigidTransform {
    let t = relative_transform(&from.pose, &to.pose);
    if flip {
        t.mirrored_horizontally()
    } else {
        t
    }
}

/// Owns the networks, optimizers and teacher-forcing state of one stage.
pub struct Trainer {
    pub models: ModelSet,
    pub stage: Stage,
    pub config: Config,
    pub tf: TeacherForcingState,
    backbone: VggFeatures,
    optimizers: BTreeMap<NetworkKind, Adam>,
    rng: ChaCha8Rng,
    device: Device,
    /// Generator steps taken so far (continues across resumes).
    pub step: u64,
}

impl Trainer {
    pub fn new(config: &Config, stage: Stage, device: &Device) -> Result<Self> {
        config.validate()?;
        let models = ModelSet::new(&config.model, config.seed, DType::F32, device)?;
        let backbone = VggFeatures::from_cache_or_random(config.train.backbone_seed, DType::F32, device)?;
        let mut adam = config.train.optimizer;
        if stage == Stage::Joint {
            adam.learning_rate *= config.train.joint_lr_factor;
        }
        let mut optimizers = BTreeMap::new();
        for kind in stage.networks() {
            let vars = models.params(kind).trainable().clone();
            optimizers.insert(kind, Adam::new(vars, adam)?);
        }
        Ok(Self {
            models,
            stage,
            tf: TeacherForcingState::new(config.teacher_forcing)?,
            backbone,
            optimizers,
            rng: ChaCha8Rng::seed_from_u64(Self::rng_seed(config.seed, stage, 0)),
            device: device.clone(),
            step: 0,
            config: config.clone(),
        })
    }

    fn rng_seed(seed: u64, stage: Stage, step: u64) -> u64 {
        seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((stage as u64) << 56) ^ step
    }

    /// Restarts the random stream as a function of the current step, so a
    /// resumed run is reproducible.
    pub fn reseed(&mut self) {
        self.rng = ChaCha8Rng::seed_from_u64(Self::rng_seed(self.config.seed, self.stage, self.step));
    }

    pub fn backbone_id(&self) -> String {
        self.backbone.id()
    }

    /// No-gradient pass of the current model on frame `k`, fed back with the
    /// ground-truth static frame `k − 1` (or nothing at `k = 0`). Returns the
    /// refined image and the depth used to warp it onward.
    pub fn model_output(
        &self,
        dyn_k: &Frame,
        sta_k: &Frame,
        sta_prev: Option<&Frame>,
        camera: &CameraModel,
        flip: bool,
    ) -> Result<(Array3<f32>, Array2<f32>)> {
        let dev = &self.device;
        let (h, w) = dyn_k.dims();
        let image = hwc_to_tensor(&dyn_k.rgb_signed(), dev)?;
        let mask = hw_to_tensor(&mask_f32(dyn_k), dev)?;
        let coarse = match self.stage {
            Stage::Refine => image.broadcast_mul(&mask.affine(-1.0, 1.0)?)?,
            _ => self.models.coarse.forward(&image, &mask)?.detach(),
        };
        let (warped, vis) = match sta_prev {
            Some(p) => {
                let t = frame_motion(p, sta_k, flip);
                let (wt, vt, _, _) = warp_previous(&p.rgb_signed(), &p.depth, camera, &t, dev)?;
                (wt, vt)
            }
            None => (
                Tensor::zeros((1, 3, h, w), DType::F32, dev)?,
                Tensor::zeros((1, 1, h, w), DType::F32, dev)?,
            ),
        };
        let refined = self.models.refine.forward(&coarse, &mask, &warped, &vis, GateMode::Learned)?.image.detach();
        let depth = match self.stage {
            Stage::Refine => sta_k.depth.clone(),
            _ => {
                let d = hw_to_tensor(&dyn_k.depth, dev)?;
                tensor_to_hw(&self.models.depth.forward(&refined, &d, &mask)?.detach(), 0)?
            }
        };
        Ok((tensor_to_hwc(&refined, 0)?, depth))
    }

    fn prepare(
        &self,
        data: &[SequencePair],
        s: SampleRef,
        params: &AugmentParams,
        teacher_forced: bool,
    ) -> Result<Prepared> {
        let pair = data
            .get(s.seq)
            .ok_or_else(|| Error::Contract(format!("sample refers to missing sequence {}", s.seq)))?;
        if s.t == 0 || s.t >= pair.len() {
            return Err(Error::Contract(format!("sample frame {} outside 1..{}", s.t, pair.len())));
        }
        let camera = pair.rig.camera()?;
        let frame = |v: &Vec<Frame>, i: usize| params.apply(&v[i]);
        let dyn_t = frame(&pair.dynamic_frames, s.t);
        let sta_t = frame(&pair.static_frames, s.t);
        let sta_p = frame(&pair.static_frames, s.t - 1);
        let (mut feedback_rgb, mut feedback_depth) = (sta_p.rgb_signed(), sta_p.depth.clone());
        let (h, w) = dyn_t.dims();
        let (mut warped, mut visibility) = (Array3::zeros((h, w, 3)), Array2::zeros((h, w)));
        if self.stage.recurrent() {
            if !teacher_forced {
                let dyn_p = frame(&pair.dynamic_frames, s.t - 1);
                let sta_pp = (s.t >= 2).then(|| frame(&pair.static_frames, s.t - 2));
                (feedback_rgb, feedback_depth) =
                    self.model_output(&dyn_p, &sta_p, sta_pp.as_ref(), &camera, params.flip)?;
            }
            let t = frame_motion(&sta_p, &sta_t, params.flip);
            let (_, _, wa, va) = warp_previous(&feedback_rgb, &feedback_depth, &camera, &t, &self.device)?;
            warped = wa;
            visibility = va.mapv(|v| v as f32);
        }
        Ok(Prepared {
            image: dyn_t.rgb_signed(),
            mask: mask_f32(&dyn_t),
            depth: dyn_t.depth.clone(),
            gt_rgb: sta_t.rgb_signed(),
            gt_depth: sta_t.depth.clone(),
            warped,
            visibility,
            feedback_rgb,
            feedback_depth,
            teacher_forced,
        })
    }

    fn batch(&self, prepared: &[Prepared]) -> Result<Batch> {
        let dev = &self.device;
        Ok(Batch {
            image: stack3(&prepared.iter().map(|p| &p.image).collect::<Vec<_>>(), dev)?,
            mask: stack2(&prepared.iter().map(|p| &p.mask).collect::<Vec<_>>(), dev)?,
            depth: stack2(&prepared.iter().map(|p| &p.depth).collect::<Vec<_>>(), dev)?,
            gt_rgb: stack3(&prepared.iter().map(|p| &p.gt_rgb).collect::<Vec<_>>(), dev)?,
            gt_depth: stack2(&prepared.iter().map(|p| &p.gt_depth).collect::<Vec<_>>(), dev)?,
            warped: stack3(&prepared.iter().map(|p| &p.warped).collect::<Vec<_>>(), dev)?,
            visibility: stack2(&prepared.iter().map(|p| &p.visibility).collect::<Vec<_>>(), dev)?,
        })
    }

    /// Generator forward pass of the stage; returns every non-adversarial
    /// term and the refined image when the stage produces one.
    fn generator_pass(&self, b: &Batch) -> Result<(LossTerms, Option<Tensor>)> {
        let m = &self.models;
        let mut terms = LossTerms::default();
        let mut refined = None;
        match self.stage {
            Stage::Depth => {
                let d = m.depth.forward(&b.gt_rgb, &b.depth, &b.mask)?;
                terms.depth_l1 = Some(masked_l1(&d, &b.gt_depth, &b.mask)?);
                terms.depth_smoothness = Some(smoothness_loss(&d)?);
            }
            Stage::Coarse => {
                let c = m.coarse.forward(&b.image, &b.mask)?;
                terms.coarse_l1 = Some(masked_l1(&c, &b.gt_rgb, &b.mask)?);
            }
            Stage::Refine | Stage::Joint => {
                let coarse = if self.stage == Stage::Refine {
                    b.image.broadcast_mul(&b.mask.affine(-1.0, 1.0)?)?
                } else {
                    let c = m.coarse.forward(&b.image, &b.mask)?;
                    terms.coarse_l1 = Some(masked_l1(&c, &b.gt_rgb, &b.mask)?);
                    c
                };
                let r = m.refine.forward(&coarse, &b.mask, &b.warped, &b.visibility, GateMode::Learned)?.image;
                terms.image_l1 = Some(l1(&r, &b.gt_rgb)?);
                let fp = self.backbone.features(&r)?;
                let fg: Vec<Tensor> = self.backbone.features(&b.gt_rgb)?.iter().map(|t| t.detach()).collect();
                terms.image_perceptual = Some(perceptual_from_features(&fp, &fg)?);
                terms.image_style = Some(style_from_features(&fp, &fg)?);
                if self.stage == Stage::Joint {
                    // The depth network sees the refined image without a
                    // gradient path back into the image generators.
                    let d = m.depth.forward(&r.detach(), &b.depth, &b.mask)?;
                    terms.depth_l1 = Some(masked_l1(&d, &b.gt_depth, &b.mask)?);
                    terms.depth_smoothness = Some(smoothness_loss(&d)?);
                }
                refined = Some(r);
            }
        }
        Ok((terms, refined))
    }

    fn step_networks(&mut self, kinds: &[NetworkKind], grads: &candle_core::backprop::GradStore) -> Result<()> {
        for kind in kinds {
            if let Some(opt) = self.optimizers.get_mut(kind) {
                opt.step(grads)?;
            }
        }
        Ok(())
    }

    /// One discriminator update (adversarial stages) followed by one
    /// generator update on a batch of samples.
    pub fn train_step(&mut self, data: &[SequencePair], batch: &[SampleRef], opts: StepOptions) -> Result<StepOutcome> {
        if batch.is_empty() {
            return Err(Error::Contract("empty training batch".into()));
        }
        let p_tf = self.tf.p_tf();
        let augment = opts.augment.unwrap_or(self.config.train.augment);
        let mut prepared = Vec::with_capacity(batch.len());
        for &s in batch {
            let params = if augment {
                AugmentParams::sample(&self.config.augment, &mut self.rng)
            } else {
                AugmentParams::identity()
            };
            let coin = self.rng.gen_bool(p_tf.clamp(0.0, 1.0));
            let tf = opts.force_tf.unwrap_or(s.t == 1 || coin);
            prepared.push(self.prepare(data, s, &params, tf)?);
        }
        let b = self.batch(&prepared)?;
        let (mut terms, refined) = self.generator_pass(&b)?;

        let mut d_loss = None;
        if self.stage.adversarial() {
            let fake = refined.as_ref().expect("adversarial stages refine").detach();
            let disc = &self.models.discriminator;
            let real_scores = disc.forward(&b.gt_rgb, &b.mask, true)?;
            let fake_scores = disc.forward(&fake, &b.mask, true)?;
            let loss = gan_d_loss(&real_scores, &fake_scores)?;
            let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(Error::NonFinite("discriminator".into()));
            }
            let grads = loss.backward()?;
            self.step_networks(&[NetworkKind::Discriminator], &grads)?;
            d_loss = Some(value);
            let r = refined.as_ref().expect("adversarial stages refine");
            terms.image_gan = Some(gan_g_loss(&self.models.discriminator.forward(r, &b.mask, false)?)?);
        }

        let (total, breakdown) = total_loss(&terms, &self.config.loss)?;
        let grads = total.backward()?;
        let generators: Vec<NetworkKind> = self
            .stage
            .networks()
            .into_iter()
            .filter(|k| *k != NetworkKind::Discriminator)
            .collect();
        self.step_networks(&generators, &grads)?;
        self.step += 1;
        if self.stage.recurrent() {
            self.tf.push(breakdown.image_l1);
        }
        Ok(StepOutcome {
            breakdown,
            d_loss,
            p_tf,
            teacher_forced: prepared.iter().map(|p| p.teacher_forced).collect(),
            feedback_rgb: prepared.iter().map(|p| p.feedback_rgb.clone()).collect(),
            feedback_depth: prepared.iter().map(|p| p.feedback_depth.clone()).collect(),
        })
    }

    /// Mean per-term generator losses over `samples` with teacher forcing
    /// and no augmentation; `total` is the early-stopping criterion.
    pub fn validate(&self, data: &[SequencePair], samples: &[SampleRef]) -> Result<LossBreakdown> {
        if samples.is_empty() {
            return Err(Error::Contract("validation split has no samples".into()));
        }
        let mut sum = LossBreakdown::default();
        for &s in samples {
            let p = self.prepare(data, s, &AugmentParams::identity(), true)?;
            let b = self.batch(std::slice::from_ref(&p))?;
            let (mut terms, refined) = self.generator_pass(&b)?;
            if let Some(r) = refined.filter(|_| self.stage.adversarial()) {
                terms.image_gan = Some(gan_g_loss(&self.models.discriminator.forward(&r, &b.mask, false)?)?);
            }
            let v = total_loss(&terms, &self.config.loss)?.1;
            sum.coarse_l1 += v.coarse_l1;
            sum.image_l1 += v.image_l1;
            sum.image_perceptual += v.image_perceptual;
            sum.image_style += v.image_style;
            sum.image_gan += v.image_gan;
            sum.depth_l1 += v.depth_l1;
            sum.depth_smoothness += v.depth_smoothness;
            sum.total += v.total;
        }
        let n = samples.len() as f64;
        Ok(LossBreakdown {
            coarse_l1: sum.coarse_l1 / n,
            image_l1: sum.image_l1 / n,
            image_perceptual: sum.image_perceptual / n,
            image_style: sum.image_style / n,
            image_gan: sum.image_gan / n,
            depth_l1: sum.depth_l1 / n,
            depth_smoothness: sum.depth_smoothness / n,
            total: sum.total / n,
        })
    }

    fn manifest(&self, epoch: u64, best: Option<f64>, since_best: u64) -> CheckpointManifest {
        let mut m = CheckpointManifest::new(&self.config.model, &self.config.hash(), self.stage.name(), self.stage.networks());
        m.step = self.step;
        m.epoch = epoch;
        m.best_validation = best;
        m.teacher_forcing_window = self.tf.window();
        m.epochs_without_improvement = since_best;
        m
    }

    /// Networks, optimizer moments and manifest into `dir`.
    pub fn save(&self, dir: &Path, epoch: u64, best: Option<f64>, since_best: u64) -> Result<()> {
        save_checkpoint(dir, &self.manifest(epoch, best, since_best), &self.models)?;
        for (kind, opt) in &self.optimizers {
            opt.save(&optimizer_file(dir, *kind))?;
        }
        Ok(())
    }

    /// Restores a checkpoint written by [`Trainer::save`] for the same stage.
    pub fn resume_from(&mut self, dir: &Path) -> Result<CheckpointManifest> {
        let manifest = load_checkpoint(dir, &self.models, None)?;
        if manifest.stage != self.stage.name() {
            return Err(Error::Checkpoint(format!(
                "{} holds stage `{}`, not `{}`",
                dir.display(),
                manifest.stage,
                self.stage.name()
            )));
        }
        for (kind, opt) in self.optimizers.iter_mut() {
            opt.load(&optimizer_file(dir, *kind), manifest.step)?;
        }
        self.step = manifest.step;
        self.tf = TeacherForcingState::from_window(self.config.teacher_forcing, &manifest.teacher_forcing_window)?;
        self.reseed();
        Ok(manifest)
    }

    /// Loads the best checkpoints of the three pretraining stages.
    pub fn load_pretrained(&mut self, out_dir: &Path) -> Result<()> {
        for (stage, kinds) in [
            (Stage::Coarse, vec![NetworkKind::Coarse]),
            (Stage::Refine, vec![NetworkKind::Refine, NetworkKind::Discriminator]),
            (Stage::Depth, vec![NetworkKind::Depth]),
        ] {
            let dir = best_dir(out_dir, stage);
            if !dir.join(crate::models::checkpoint::MANIFEST_FILE).is_file() {
                return Err(Error::Config(format!(
                    "joint stage requires the `{}` checkpoint at {}",
                    stage.name(),
                    dir.display()
                )));
            }
            load_checkpoint(&dir, &self.models, Some(&kinds))?;
        }
        Ok(())
    }
}

pub fn optimizer_file(dir: &Path, kind: NetworkKind) -> PathBuf {
    dir.join(format!("{}.adam.safetensors", kind.name()))
}

pub fn stage_dir(out_dir: &Path, stage: Stage) -> PathBuf {
    out_dir.join(stage.name())
}

pub fn best_dir(out_dir: &Path, stage: Stage) -> PathBuf {
    stage_dir(out_dir, stage).join("best")
}

pub fn last_dir(out_dir: &Path, stage: Stage) -> PathBuf {
    stage_dir(out_dir, stage).join("last")
}

pub const LOG_FILE: &str = "log.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub steps: u64,
    pub epochs: u64,
    pub best_validation: Option<f64>,
    pub stopped_early: bool,
    pub best_dir: PathBuf,
    pub last_dir: PathBuf,
}

struct JsonLog(File);

impl JsonLog {
    fn open(path: &Path, append: bool) -> Result<Self> {
        let f = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self(f))
    }

    fn write(&mut self, value: serde_json::Value) -> Result<()> {
        writeln!(self.0, "{value}").map_err(|e| Error::io("log.jsonl", e))
    }
}

/// Runs one stage to completion: epochs over shuffled samples, validation
/// after each epoch, best/last checkpoints, early stopping.
pub fn run_stage(
    config: &Config,
    stage: Stage,
    train: &[SequencePair],
    val: &[SequencePair],
    out_dir: &Path,
    device: &Device,
) -> Result<StageReport> {
    let mut trainer = Trainer::new(config, stage, device)?;
    let dir = stage_dir(out_dir, stage);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let (best_path, last_path) = (best_dir(out_dir, stage), last_dir(out_dir, stage));

    let mut epoch = 0;
    let mut best: Option<f64> = None;
    let mut since_best = 0;
    let resuming = config.train.resume && last_path.join(crate::models::checkpoint::MANIFEST_FILE).is_file();
    if resuming {
        let m = trainer.resume_from(&last_path)?;
        epoch = m.epoch;
        best = m.best_validation;
        since_best = m.epochs_without_improvement;
    } else if stage == Stage::Joint {
        trainer.load_pretrained(out_dir)?;
    }
    let mut log = JsonLog::open(&dir.join(LOG_FILE), resuming)?;
    log.write(json!({
        "kind": "start",
        "stage": stage.name(),
        "step": trainer.step,
        "epoch": epoch,
        "resumed": resuming,
        "config_hash": config.hash(),
        "backbone": trainer.backbone_id(),
    }))?;

    let train_samples = enumerate_samples(train);
    let val_samples = enumerate_samples(val);
    if train_samples.is_empty() {
        return Err(Error::Config("training split has no frame pairs".into()));
    }
    let mut stopped_early = false;
    while trainer.step < config.train.max_steps && epoch < config.train.max_epochs && !stopped_early {
        let mut order = train_samples.clone();
        order.shuffle(&mut trainer.rng);
        for chunk in order.chunks(config.train.batch_size) {
            if trainer.step >= config.train.max_steps {
                break;
            }
            let out = trainer.train_step(train, chunk, StepOptions::default())?;
            let tf_fraction = out.teacher_forced.iter().filter(|&&x| x).count() as f64 / chunk.len() as f64;
            log.write(json!({
                "kind": "step",
                "step": trainer.step,
                "epoch": epoch,
                "p_tf": out.p_tf,
                "tf_fraction": tf_fraction,
                "d_loss": out.d_loss,
                "losses": out.breakdown,
            }))?;
        }
        epoch += 1;
        let breakdown = trainer.validate(val, &val_samples)?;
        let v = breakdown.total;
        let improved = best.is_none_or(|b| v < b);
        if improved {
            best = Some(v);
            since_best = 0;
            trainer.save(&best_path, epoch, best, since_best)?;
        } else {
            since_best += 1;
        }
        trainer.save(&last_path, epoch, best, since_best)?;
        log.write(json!({
            "kind": "validation",
            "step": trainer.step,
            "epoch": epoch,
            "loss": v,
            "losses": breakdown,
            "best": best,
            "improved": improved,
        }))?;
        if since_best >= config.train.patience {
            stopped_early = true;
            log.write(json!({ "kind": "early_stop", "step": trainer.step, "epoch": epoch }))?;
        }
    }
    log.write(json!({ "kind": "end", "step": trainer.step, "epoch": epoch, "best": best }))?;
    Ok(StageReport {
        stage,
        steps: trainer.step,
        epochs: epoch,
        best_validation: best,
        stopped_early,
        best_dir: best_path,
        last_dir: last_path,
    })
}
