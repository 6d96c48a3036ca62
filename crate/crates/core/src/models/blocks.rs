//! Shared building blocks: a pre-activation bottleneck encoder, the
//! upsampling decoder, and basic residual blocks.

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::{upsample_bilinear2x, Conv2d, ConvSpec, GroupNorm, ParamStore};

/// Bottleneck units per stage for a pre-activation residual encoder.
pub fn bottleneck_layout(depth: usize) -> Result<[usize; 4]> {
    match depth {
        26 => Ok([2, 2, 2, 2]),
        38 => Ok([3, 3, 3, 3]),
        50 => Ok([3, 4, 6, 3]),
        101 => Ok([3, 4, 23, 3]),
        _ => Err(Error::Config(format!(
            "unsupported bottleneck encoder depth {depth} (26, 38, 50, 101)"
        ))),
    }
}

/// Basic blocks per stage for the depth encoder.
pub fn basic_layout(depth: usize) -> Result<[usize; 4]> {
    match depth {
        10 => Ok([1, 1, 1, 1]),
        18 => Ok([2, 2, 2, 2]),
        34 => Ok([3, 4, 6, 3]),
        _ => Err(Error::Config(format!("unsupported basic encoder depth {depth} (10, 18, 34)"))),
    }
}

/// `round(base · scale)`, at least 1.
pub fn scaled(base: usize, scale: f64) -> usize {
    ((base as f64 * scale).round() as usize).max(1)
}

#[derive(Debug, Clone)]
struct PreActBottleneck {
    norm1: GroupNorm,
    conv1: Conv2d,
    norm2: GroupNorm,
    conv2: Conv2d,
    norm3: GroupNorm,
    conv3: Conv2d,
    shortcut: Option<Conv2d>,
}

impl PreActBottleneck {
    fn new(
        ps: &mut ParamStore,
        name: &str,
        in_c: usize,
        mid: usize,
        out_c: usize,
        stride: usize,
        dilation: usize,
    ) -> Result<Self> {
        let spec = ConvSpec {
            kernel: 3,
            stride,
            pad: dilation,
            dilation,
        };
        let shortcut = if stride != 1 || in_c != out_c {
            Some(Conv2d::new(
                ps,
                &format!("{name}.shortcut"),
                in_c,
                out_c,
                ConvSpec {
                    kernel: 1,
                    stride,
                    pad: 0,
                    dilation: 1,
                },
                false,
            )?)
        } else {
            None
        };
        Ok(Self {
            norm1: GroupNorm::new(ps, &format!("{name}.norm1"), in_c)?,
            conv1: Conv2d::new(ps, &format!("{name}.conv1"), in_c, mid, ConvSpec::same(1), false)?,
            norm2: GroupNorm::new(ps, &format!("{name}.norm2"), mid)?,
            conv2: Conv2d::new(ps, &format!("{name}.conv2"), mid, mid, spec, false)?,
            norm3: GroupNorm::new(ps, &format!("{name}.norm3"), mid)?,
            conv3: Conv2d::new(ps, &format!("{name}.conv3"), mid, out_c, ConvSpec::same(1), false)?,
            shortcut,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let pre = self.norm1.forward(x)?.relu()?;
        let skip = match &self.shortcut {
            Some(conv) => conv.forward(&pre)?,
            None => x.clone(),
        };
        let h = self.conv1.forward(&pre)?;
        let h = self.conv2.forward(&self.norm2.forward(&h)?.relu()?)?;
        let h = self.conv3.forward(&self.norm3.forward(&h)?.relu()?)?;
        Ok((h + skip)?)
    }
}

/// Pre-activation bottleneck residual encoder with output stride 8: a
/// stride-2 stem, two stride-2 stages and two dilated stages.
#[derive(Debug, Clone)]
pub struct ResidualEncoder {
    stem: Conv2d,
    units: Vec<PreActBottleneck>,
    final_norm: GroupNorm,
    pub out_channels: usize,
}

impl ResidualEncoder {
    pub fn new(ps: &mut ParamStore, name: &str, in_channels: usize, depth: usize, scale: f64) -> Result<Self> {
        let layout = bottleneck_layout(depth)?;
        let stem_c = scaled(64, scale);
        let stem = Conv2d::new(ps, &format!("{name}.stem"), in_channels, stem_c, ConvSpec::strided(3, 2), true)?;
        let mids = [64, 128, 256, 512].map(|c| scaled(c, scale));
        let strides = [2, 2, 1, 1];
        let dilations = [1, 1, 2, 4];
        let mut units = Vec::new();
        let mut c = stem_c;
        for stage in 0..4 {
            let out_c = 4 * mids[stage];
            for i in 0..layout[stage] {
                let stride = if i == 0 { strides[stage] } else { 1 };
                units.push(PreActBottleneck::new(
                    ps,
                    &format!("{name}.layer{}.{i}", stage + 1),
                    c,
                    mids[stage],
                    out_c,
                    stride,
                    dilations[stage],
                )?);
                c = out_c;
            }
        }
        Ok(Self {
            stem,
            units,
            final_norm: GroupNorm::new(ps, &format!("{name}.final_norm"), c)?,
            out_channels: c,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.stem.forward(x)?;
        for unit in &self.units {
            h = unit.forward(&h)?;
        }
        Ok(self.final_norm.forward(&h)?.relu()?)
    }
}

/// Three (bilinear ×2, 3×3 conv halving channels, GroupNorm, ReLU) stages
/// and a 1×1 projection to `out_channels`. No output activation.
#[derive(Debug, Clone)]
pub struct UpsampleDecoder {
    stages: Vec<(Conv2d, GroupNorm)>,
    head: Conv2d,
}

impl UpsampleDecoder {
    pub fn new(ps: &mut ParamStore, name: &str, in_channels: usize, out_channels: usize) -> Result<Self> {
        let mut stages = Vec::new();
        let mut c = in_channels;
        for i in 0..3 {
            let next = (c / 2).max(1);
            let conv = Conv2d::new(ps, &format!("{name}.up{i}"), c, next, ConvSpec::same(3), true)?;
            stages.push((conv, GroupNorm::new(ps, &format!("{name}.up{i}.norm"), next)?));
            c = next;
        }
        let head = Conv2d::new(ps, &format!("{name}.head"), c, out_channels, ConvSpec::same(1), true)?;
        Ok(Self { stages, head })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (conv, norm) in &self.stages {
            h = norm.forward(&conv.forward(&upsample_bilinear2x(&h)?)?)?.relu()?;
        }
        self.head.forward(&h)
    }
}

/// Two 3×3 convs with a residual connection (post-activation).
#[derive(Debug, Clone)]
pub struct BasicBlock {
    conv1: Conv2d,
    norm1: GroupNorm,
    conv2: Conv2d,
    norm2: GroupNorm,
    shortcut: Option<(Conv2d, GroupNorm)>,
}

impl BasicBlock {
    pub fn new(ps: &mut ParamStore, name: &str, in_c: usize, out_c: usize, stride: usize) -> Result<Self> {
        let shortcut = if stride != 1 || in_c != out_c {
            Some((
                Conv2d::new(
                    ps,
                    &format!("{name}.shortcut"),
                    in_c,
                    out_c,
                    ConvSpec {
                        kernel: 1,
                        stride,
                        pad: 0,
                        dilation: 1,
                    },
                    false,
                )?,
                GroupNorm::new(ps, &format!("{name}.shortcut_norm"), out_c)?,
            ))
        } else {
            None
        };
        Ok(Self {
            conv1: Conv2d::new(ps, &format!("{name}.conv1"), in_c, out_c, ConvSpec::strided(3, stride), false)?,
            norm1: GroupNorm::new(ps, &format!("{name}.norm1"), out_c)?,
            conv2: Conv2d::new(ps, &format!("{name}.conv2"), out_c, out_c, ConvSpec::same(3), false)?,
            norm2: GroupNorm::new(ps, &format!("{name}.norm2"), out_c)?,
            shortcut,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.norm1.forward(&self.conv1.forward(x)?)?.relu()?;
        let h = self.norm2.forward(&self.conv2.forward(&h)?)?;
        let skip = match &self.shortcut {
            Some((conv, norm)) => norm.forward(&conv.forward(x)?)?,
            None => x.clone(),
        };
        Ok((h + skip)?.relu()?)
    }
}

/// `mask·generated + (1 − mask)·input`; exact pass-through where mask = 0.
pub fn compose(generated: &Tensor, input: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let keep = mask.affine(-1.0, 1.0)?;
    Ok((generated.broadcast_mul(mask)? + input.broadcast_mul(&keep)?)?)
}

/// Checks that `x` is `B×C×H×W` with the given channel count and that `H`
/// and `W` are multiples of `multiple`.
pub fn check_input(x: &Tensor, channels: usize, multiple: usize, what: &str) -> Result<(usize, usize, usize)> {
    let dims = x.dims();
    if dims.len() != 4 || dims[1] != channels {
        return Err(Error::Contract(format!("{what}: expected B×{channels}×H×W, got {dims:?}")));
    }
    if dims[2] % multiple != 0 || dims[3] % multiple != 0 || dims[2] == 0 || dims[3] == 0 {
        return Err(Error::Contract(format!(
            "{what}: spatial size {}×{} must be a positive multiple of {multiple}",
            dims[2], dims[3]
        )));
    }
    Ok((dims[0], dims[2], dims[3]))
}
