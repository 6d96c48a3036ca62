use candle_core::{Tensor, Var};

use super::ops::{conv2d, conv_transpose2d, group_norm};
use super::params::ParamStore;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Var,
    pub bias: Option<Var>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

/// Kernel/stride/padding/dilation of a square convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvSpec {
    /// Same-size `k×k` convolution at stride 1.
    pub fn same(kernel: usize) -> Self {
        Self {
            kernel,
            stride: 1,
            pad: kernel / 2,
            dilation: 1,
        }
    }

    pub fn strided(kernel: usize, stride: usize) -> Self {
        Self {
            kernel,
            stride,
            pad: kernel / 2,
            dilation: 1,
        }
    }

    pub fn dilated(kernel: usize, dilation: usize) -> Self {
        Self {
            kernel,
            stride: 1,
            pad: dilation * (kernel / 2),
            dilation,
        }
    }
}

impl Conv2d {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        spec: ConvSpec,
        bias: bool,
    ) -> Result<Self> {
        let fan_in = in_channels * spec.kernel * spec.kernel;
        let weight = ps.normal(
            &format!("{name}.weight"),
            &[out_channels, fan_in],
            (2.0 / fan_in as f64).sqrt(),
        )?;
        let bias = if bias {
            Some(ps.constant(&format!("{name}.bias"), &[out_channels], 0.0)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel: spec.kernel,
            stride: spec.stride,
            pad: spec.pad,
            dilation: spec.dilation,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_with_weight(x, self.weight.as_tensor())
    }

    /// Runs the convolution with a substitute weight of the same shape.
    pub fn forward_with_weight(&self, x: &Tensor, weight: &Tensor) -> Result<Tensor> {
        Ok(conv2d(
            x,
            weight,
            self.bias.as_ref().map(|b| b.as_tensor()),
            self.kernel,
            self.stride,
            self.pad,
            self.dilation,
        )?)
    }
}

/// Transposed convolution with output padding.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: Var,
    pub bias: Option<Var>,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub output_pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Result<Self> {
        let fan_in = (in_channels * kernel * kernel) as f64 / (stride * stride) as f64;
        let weight = ps.normal(
            &format!("{name}.weight"),
            &[in_channels, out_channels * kernel * kernel],
            (2.0 / fan_in).sqrt(),
        )?;
        let bias = Some(ps.constant(&format!("{name}.bias"), &[out_channels], 0.0)?);
        Ok(Self {
            weight,
            bias,
            kernel,
            stride,
            pad,
            output_pad,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(conv_transpose2d(
            x,
            self.weight.as_tensor(),
            self.bias.as_ref().map(|b| b.as_tensor()),
            self.kernel,
            self.stride,
            self.pad,
            self.output_pad,
        )?)
    }
}

/// Group normalization with per-channel affine parameters.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: Var,
    pub beta: Var,
    pub groups: usize,
    channels: usize,
}

impl GroupNorm {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let groups = (1..=8.min(channels)).rev().find(|g| channels % g == 0).unwrap_or(1);
        Ok(Self {
            gamma: ps.constant(&format!("{name}.gamma"), &[channels], 1.0)?,
            beta: ps.constant(&format!("{name}.beta"), &[channels], 0.0)?,
            groups,
            channels,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = group_norm(x, self.groups, 1e-5)?;
        let shape = (1, self.channels, 1, 1);
        Ok(y
            .broadcast_mul(&self.gamma.as_tensor().reshape(shape)?)?
            .broadcast_add(&self.beta.as_tensor().reshape(shape)?)?)
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}
