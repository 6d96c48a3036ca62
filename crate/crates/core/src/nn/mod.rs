//! Minimal neural-network toolkit on top of candle tensors: im2col
//! convolutions, group norm, bilinear upsampling, spectral normalization, a
//! seeded parameter store and Adam.

pub mod adam;
pub mod layers;
pub mod ops;
pub mod params;
pub mod spectral;

pub use adam::{Adam, AdamConfig};
pub use layers::{leaky_relu, Conv2d, ConvSpec, ConvTranspose2d, GroupNorm};
pub use ops::{conv2d, conv_transpose2d, group_norm, upsample_bilinear2x};
pub use params::ParamStore;
pub use spectral::{power_iteration, SpectralConv2d};

use candle_core::{Device, Tensor};
use ndarray::{Array2, Array3};

use crate::error::Result;

/// `H×W×C` array → `1×C×H×W` tensor.
pub fn hwc_to_tensor(a: &Array3<f32>, device: &Device) -> Result<Tensor> {
    let (h, w, c) = a.dim();
    let data: Vec<f32> = a.as_standard_layout().iter().copied().collect();
    Ok(Tensor::from_vec(data, (h, w, c), device)?
        .permute((2, 0, 1))?
        .contiguous()?
        .unsqueeze(0)?)
}

/// `H×W` array → `1×1×H×W` tensor.
pub fn hw_to_tensor(a: &Array2<f32>, device: &Device) -> Result<Tensor> {
    let (h, w) = a.dim();
    let data: Vec<f32> = a.as_standard_layout().iter().copied().collect();
    Ok(Tensor::from_vec(data, (1, 1, h, w), device)?)
}

/// Batch element `b` of a `B×C×H×W` tensor → `H×W×C` array.
pub fn tensor_to_hwc(t: &Tensor, b: usize) -> Result<Array3<f32>> {
    let (_, c, h, w) = t.dims4()?;
    let data = t
        .get(b)?
        .permute((1, 2, 0))?
        .to_dtype(candle_core::DType::F32)?
        .flatten_all()?
        .to_vec1::<f32>()?;
    Ok(Array3::from_shape_vec((h, w, c), data).expect("shape matches"))
}

/// Channel 0 of batch element `b` → `H×W` array.
pub fn tensor_to_hw(t: &Tensor, b: usize) -> Result<Array2<f32>> {
    let (_, _, h, w) = t.dims4()?;
    let data = t
        .get(b)?
        .get(0)?
        .to_dtype(candle_core::DType::F32)?
        .flatten_all()?
        .to_vec1::<f32>()?;
    Ok(Array2::from_shape_vec((h, w), data).expect("shape matches"))
}
