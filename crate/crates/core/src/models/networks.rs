use candle_core::Tensor;

use super::blocks::{check_input, compose, scaled, BasicBlock, ResidualEncoder, UpsampleDecoder};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{leaky_relu, Conv2d, ConvSpec, ConvTranspose2d, ParamStore, SpectralConv2d};

/// Coarse generator: `[I⊙(1−M), M] → Ĩ′`, composited so that only masked
/// pixels come from the network.
#[derive(Debug, Clone)]
pub struct CoarseGenerator {
    encoder: ResidualEncoder,
    decoder: UpsampleDecoder,
}

impl CoarseGenerator {
    pub fn new(ps: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let encoder = ResidualEncoder::new(ps, "coarse.encoder", 4, cfg.coarse_encoder_depth, cfg.model_scale)?;
        let decoder = UpsampleDecoder::new(ps, "coarse.decoder", encoder.out_channels, 3)?;
        Ok(Self { encoder, decoder })
    }

    /// Raw network prediction in `[-1, 1]` before composition.
    pub fn generate(&self, image: &Tensor, mask: &Tensor) -> Result<Tensor> {
        check_input(image, 3, 8, "coarse image")?;
        check_same_hw(image, mask, "coarse mask")?;
        let masked = image.broadcast_mul(&mask.affine(-1.0, 1.0)?)?;
        let x = Tensor::cat(&[&masked, mask], 1)?;
        Ok(self.decoder.forward(&self.encoder.forward(&x)?)?.tanh()?)
    }

    pub fn forward(&self, image: &Tensor, mask: &Tensor) -> Result<Tensor> {
        compose(&self.generate(image, mask)?, image, mask)
    }
}

fn check_same_hw(reference: &Tensor, other: &Tensor, what: &str) -> Result<()> {
    let (a, b) = (reference.dims(), other.dims());
    if b.len() != 4 || a[0] != b[0] || a[2..] != b[2..] {
        return Err(Error::Contract(format!("{what}: shape {b:?} does not match {a:?}")));
    }
    Ok(())
}

/// `M⊙ψ_t + (1−M)⊙ψ_prev` with `M` (`B×1×h×w`) broadcast over channels.
pub fn gate_fuse(psi_t: &Tensor, psi_prev: &Tensor, gate: &Tensor) -> Result<Tensor> {
    if psi_t.dims() != psi_prev.dims() {
        return Err(Error::Contract(format!(
            "gate_fuse: feature shapes differ ({:?} vs {:?})",
            psi_t.dims(),
            psi_prev.dims()
        )));
    }
    let (b, _, h, w) = psi_t.dims4()?;
    if gate.dims() != [b, 1, h, w] {
        return Err(Error::Contract(format!(
            "gate_fuse: gate shape {:?}, expected {:?}",
            gate.dims(),
            [b, 1, h, w]
        )));
    }
    let keep = gate.affine(-1.0, 1.0)?;
    Ok((psi_t.broadcast_mul(gate)? + psi_prev.broadcast_mul(&keep)?)?)
}

/// How the refinement network obtains its fusion gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateMode {
    Learned,
    /// Constant gate; `Fixed(1.0)` ignores the previous-frame features.
    Fixed(f64),
}

/// Five halving 3×3 convs and a 1×1 conv to a single sigmoid channel.
#[derive(Debug, Clone)]
struct GatingModule {
    convs: Vec<Conv2d>,
    head: Conv2d,
}

impl GatingModule {
    fn new(ps: &mut ParamStore, in_c: usize) -> Result<Self> {
        let mut convs = Vec::new();
        let mut c = in_c;
        for i in 0..5 {
            let next = (c / 2).max(1);
            convs.push(Conv2d::new(ps, &format!("refine.gate.conv{i}"), c, next, ConvSpec::same(3), true)?);
            c = next;
        }
        let head = Conv2d::new(ps, "refine.gate.head", c, 1, ConvSpec::same(1), true)?;
        Ok(Self { convs, head })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for conv in &self.convs {
            h = conv.forward(&h)?.relu()?;
        }
        Ok(candle_nn::ops::sigmoid(&self.head.forward(&h)?)?)
    }
}

/// Output of a refinement pass.
#[derive(Debug, Clone)]
pub struct RefineOutput {
    pub image: Tensor,
    /// Fusion gate at 1/8 resolution, `B×1×H/8×W/8`.
    pub gate: Tensor,
}

/// Two encoders (current coarse result; warped previous output), gated
/// fusion, and a decoder producing the full refined image.
#[derive(Debug, Clone)]
pub struct RefinementNet {
    encoder_t: ResidualEncoder,
    encoder_prev: ResidualEncoder,
    gating: GatingModule,
    decoder: UpsampleDecoder,
}

impl RefinementNet {
    pub fn new(ps: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let encoder_t = ResidualEncoder::new(ps, "refine.encoder_t", 4, cfg.coarse_encoder_depth, cfg.model_scale)?;
        let encoder_prev =
            ResidualEncoder::new(ps, "refine.encoder_prev", 4, cfg.coarse_encoder_depth, cfg.model_scale)?;
        let c = encoder_t.out_channels;
        Ok(Self {
            gating: GatingModule::new(ps, 2 * c)?,
            decoder: UpsampleDecoder::new(ps, "refine.decoder", c, 3)?,
            encoder_t,
            encoder_prev,
        })
    }

    /// `coarse` and `mask` describe the current frame; `warped_prev` holds
    /// zeros where `visibility` is 0.
    pub fn forward(
        &self,
        coarse: &Tensor,
        mask: &Tensor,
        warped_prev: &Tensor,
        visibility: &Tensor,
        mode: GateMode,
    ) -> Result<RefineOutput> {
        check_input(coarse, 3, 8, "refine coarse image")?;
        check_same_hw(coarse, mask, "refine mask")?;
        check_same_hw(coarse, warped_prev, "refine warped previous image")?;
        check_same_hw(coarse, visibility, "refine visibility")?;
        if warped_prev.dim(1)? != 3 || mask.dim(1)? != 1 || visibility.dim(1)? != 1 {
            return Err(Error::Contract("refine: expected 3-channel images and 1-channel masks".into()));
        }
        let psi_t = self.encoder_t.forward(&Tensor::cat(&[coarse, mask], 1)?)?;
        let psi_prev = self.encoder_prev.forward(&Tensor::cat(&[warped_prev, visibility], 1)?)?;
        let gate = match mode {
            GateMode::Learned => self.gating.forward(&Tensor::cat(&[&psi_t, &psi_prev], 1)?)?,
            GateMode::Fixed(v) => {
                let (b, _, h, w) = psi_t.dims4()?;
                Tensor::full(v, (b, 1, h, w), psi_t.device())?.to_dtype(psi_t.dtype())?
            }
        };
        let fused = gate_fuse(&psi_t, &psi_prev, &gate)?;
        let image = self.decoder.forward(&fused)?.tanh()?;
        Ok(RefineOutput { image, gate })
    }
}

/// Residual encoder/decoder with skip connections over
/// `[Î′, D⊙(1−M), M]`, composited so unmasked depth passes through.
#[derive(Debug, Clone)]
pub struct DepthCompletionNet {
    stem: Conv2d,
    stages: Vec<Vec<BasicBlock>>,
    ups: Vec<ConvTranspose2d>,
    fuses: Vec<Conv2d>,
    head: Conv2d,
}

impl DepthCompletionNet {
    pub fn new(ps: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let layout = super::blocks::basic_layout(cfg.depth_encoder_depth)?;
        let widths = [64, 128, 256, 512].map(|c| scaled(c, cfg.model_scale));
        let stem_c = widths[0];
        let stem = Conv2d::new(ps, "depth.stem", 5, stem_c, ConvSpec::same(3), true)?;
        let mut stages = Vec::new();
        let mut c = stem_c;
        for (s, &n) in layout.iter().enumerate() {
            let mut blocks = Vec::new();
            for i in 0..n {
                let stride = if i == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(ps, &format!("depth.layer{}.{i}", s + 1), c, widths[s], stride)?);
                c = widths[s];
            }
            stages.push(blocks);
        }
        // Skip taps: stem (1/1), layer1 (1/2), layer2 (1/4), layer3 (1/8).
        let skips = [stem_c, widths[0], widths[1], widths[2]];
        let mut ups = Vec::new();
        let mut fuses = Vec::new();
        for (i, &skip_c) in skips.iter().rev().enumerate() {
            let half = (c / 2).max(1);
            ups.push(ConvTranspose2d::new(ps, &format!("depth.up{i}"), c, half, 3, 2, 1, 1)?);
            fuses.push(Conv2d::new(ps, &format!("depth.fuse{i}"), half + skip_c, half, ConvSpec::same(3), true)?);
            c = half;
        }
        let head = Conv2d::new(ps, "depth.head", c, 1, ConvSpec::same(1), true)?;
        Ok(Self {
            stem,
            stages,
            ups,
            fuses,
            head,
        })
    }

    /// Raw prediction in `[0, 1]` before composition.
    pub fn generate(&self, image: &Tensor, masked_depth: &Tensor, mask: &Tensor) -> Result<Tensor> {
        check_input(image, 3, 16, "depth-net image")?;
        check_same_hw(image, masked_depth, "depth-net depth")?;
        check_same_hw(image, mask, "depth-net mask")?;
        let x = Tensor::cat(&[image, masked_depth, mask], 1)?;
        let mut h = self.stem.forward(&x)?.relu()?;
        let mut taps = vec![h.clone()];
        for stage in &self.stages {
            for block in stage {
                h = block.forward(&h)?;
            }
            taps.push(h.clone());
        }
        taps.pop();
        for (up, fuse) in self.ups.iter().zip(&self.fuses) {
            let skip = taps.pop().expect("one tap per decoder stage");
            let u = up.forward(&h)?.relu()?;
            h = fuse.forward(&Tensor::cat(&[&u, &skip], 1)?)?.relu()?;
        }
        Ok(candle_nn::ops::sigmoid(&self.head.forward(&h)?)?)
    }

    pub fn forward(&self, image: &Tensor, depth: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let masked = depth.broadcast_mul(&mask.affine(-1.0, 1.0)?)?;
        compose(&self.generate(image, &masked, mask)?, depth, mask)
    }
}

/// Six spectrally normalized 5×5 stride-2 convolutions over `[image, mask]`.
#[derive(Debug, Clone)]
pub struct PatchDiscriminator {
    pub convs: Vec<SpectralConv2d>,
}

impl PatchDiscriminator {
    pub fn new(ps: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let widths = [64, 128, 256, 256, 256, 256].map(|c| scaled(c, cfg.model_scale));
        let mut convs = Vec::new();
        let mut c = 4;
        for (i, &w) in widths.iter().enumerate() {
            convs.push(SpectralConv2d::new(ps, &format!("disc.conv{i}"), c, w, ConvSpec::strided(5, 2))?);
            c = w;
        }
        Ok(Self { convs })
    }

    pub fn forward(&self, image: &Tensor, mask: &Tensor, train: bool) -> Result<Tensor> {
        check_input(image, 3, 1, "discriminator image")?;
        check_same_hw(image, mask, "discriminator mask")?;
        let mut h = Tensor::cat(&[image, mask], 1)?;
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h, train)?;
            if i < last {
                h = leaky_relu(&h, 0.2)?;
            }
        }
        Ok(h)
    }
}
