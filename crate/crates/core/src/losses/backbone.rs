//! Frozen feature extractors for the perceptual and style losses.

use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::conv2d;

/// Environment variable naming the directory that may hold `vgg16.safetensors`.
pub const CACHE_ENV: &str = "DYNAFILL_CACHE";
pub const VGG16_FILE: &str = "vgg16.safetensors";

/// A frozen network exposing intermediate feature maps.
pub trait FeatureExtractor: Send + Sync {
    /// Human-readable identity recorded in reports.
    fn id(&self) -> String;
    /// Tapped feature maps for a `B×3×H×W` image in `[-1, 1]`.
    fn features(&self, image: &Tensor) -> Result<Vec<Tensor>>;
}

#[derive(Debug, Clone)]
enum Layer {
    Conv { weight: Tensor, bias: Tensor },
    Relu,
    Pool,
}

/// VGG-style stack of 3×3 convolutions, ReLUs and 2×2 average pools with
/// three feature taps.
#[derive(Debug, Clone)]
pub struct VggFeatures {
    layers: Vec<Layer>,
    /// Indices into `layers` after which features are tapped.
    taps: Vec<usize>,
    mean: Tensor,
    std: Tensor,
    id: String,
}

/// 2×2 average pooling; odd trailing rows/columns are dropped and inputs
/// smaller than 2 pixels along an axis pass through.
fn pool2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if h < 2 || w < 2 {
        return Ok(x.clone());
    }
    let (h2, w2) = (h / 2, w / 2);
    let x = x.narrow(2, 0, 2 * h2)?.narrow(3, 0, 2 * w2)?;
    Ok(x.reshape((b, c, h2, 2, w2, 2))?.mean(5)?.mean(3)?)
}

/// Layer plan: positive entries are conv output widths, 0 is a pool.
fn build_plan(widths: &[usize]) -> (Vec<(usize, usize)>, Vec<bool>) {
    let mut convs = Vec::new();
    let mut is_pool = Vec::new();
    let mut c = 3;
    for &w in widths {
        if w == 0 {
            is_pool.push(true);
        } else {
            convs.push((c, w));
            is_pool.push(false);
            c = w;
        }
    }
    (convs, is_pool)
}

impl VggFeatures {
    fn normalization(dtype: DType, device: &Device) -> Result<(Tensor, Tensor)> {
        let mean = Tensor::new(&[0.485f32, 0.456, 0.406], device)?.reshape((1, 3, 1, 1))?.to_dtype(dtype)?;
        let std = Tensor::new(&[0.229f32, 0.224, 0.225], device)?.reshape((1, 3, 1, 1))?.to_dtype(dtype)?;
        Ok((mean, std))
    }

    fn assemble(
        plan: &[usize],
        tap_after_conv: &[usize],
        mut weights: impl FnMut(usize, usize, usize) -> Result<(Tensor, Tensor)>,
        dtype: DType,
        device: &Device,
        id: String,
    ) -> Result<Self> {
        let (convs, is_pool) = build_plan(plan);
        let mut layers = Vec::new();
        let mut taps = Vec::new();
        let mut conv_idx = 0;
        for pool in is_pool {
            if pool {
                layers.push(Layer::Pool);
                continue;
            }
            let (cin, cout) = convs[conv_idx];
            let (weight, bias) = weights(conv_idx, cin, cout)?;
            layers.push(Layer::Conv {
                weight: weight.to_dtype(dtype)?,
                bias: bias.to_dtype(dtype)?,
            });
            layers.push(Layer::Relu);
            if tap_after_conv.contains(&conv_idx) {
                taps.push(layers.len() - 1);
            }
            conv_idx += 1;
        }
        let (mean, std) = Self::normalization(dtype, device)?;
        Ok(Self {
            layers,
            taps,
            mean,
            std,
            id,
        })
    }

    /// Small random-weight pyramid, frozen at `seed`. Taps at 1/2, 1/4, 1/8.
    pub fn random(seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let plan = [16, 0, 32, 32, 0, 64, 64, 0, 64];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = |_: usize, cin: usize, cout: usize| {
            let fan_in = cin * 9;
            let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
            let w: Vec<f32> = (0..cout * fan_in).map(|_| dist.sample(&mut rng) as f32).collect();
            Ok((
                Tensor::from_vec(w, (cout, fan_in), device)?,
                Tensor::zeros(cout, DType::F32, device)?,
            ))
        };
        Self::assemble(&plan, &[2, 4, 5], weights, dtype, device, format!("random-pyramid(seed={seed})"))
    }

    /// VGG-16 convolution stack from a safetensors file using torchvision
    /// names (`features.{i}.weight`), tapped at relu2_2, relu3_3, relu4_3.
    pub fn vgg16(path: &Path, dtype: DType, device: &Device) -> Result<Self> {
        let tensors = candle_core::safetensors::load(path, device)
            .map_err(|e| Error::Checkpoint(format!("loading {}: {e}", path.display())))?;
        let plan = [64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512];
        // torchvision indices of the conv layers in `features`.
        let torch_idx = [0, 2, 5, 7, 10, 12, 14, 17, 19, 21];
        let weights = |i: usize, cin: usize, cout: usize| {
            let get = |suffix: &str| {
                let key = format!("features.{}.{suffix}", torch_idx[i]);
                tensors
                    .get(&key)
                    .cloned()
                    .ok_or_else(|| Error::Checkpoint(format!("{} lacks `{key}`", path.display())))
            };
            let w = get("weight")?;
            if w.dims() != [cout, cin, 3, 3] {
                return Err(Error::Checkpoint(format!("unexpected VGG-16 weight shape {:?}", w.dims())));
            }
            Ok((w.reshape((cout, cin * 9))?, get("bias")?))
        };
        // relu2_2, relu3_3 and relu4_3 follow convs 3, 6 and 9. Max pooling
        // is replaced by average pooling.
        Self::assemble(&plan, &[3, 6, 9], weights, dtype, device, format!("vgg16({})", path.display()))
    }

    /// VGG-16 if `$DYNAFILL_CACHE/vgg16.safetensors` exists, else the random pyramid.
    pub fn from_cache_or_random(seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        match cached_vgg16_path() {
            Some(p) => Self::vgg16(&p, dtype, device),
            None => Self::random(seed, dtype, device),
        }
    }
}

pub fn cached_vgg16_path() -> Option<PathBuf> {
    let dir = std::env::var_os(CACHE_ENV)?;
    let p = Path::new(&dir).join(VGG16_FILE);
    p.is_file().then_some(p)
}

impl FeatureExtractor for VggFeatures {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn features(&self, image: &Tensor) -> Result<Vec<Tensor>> {
        let x01 = image.affine(0.5, 0.5)?;
        let mut h = x01.broadcast_sub(&self.mean)?.broadcast_div(&self.std)?;
        let mut out = Vec::with_capacity(self.taps.len());
        for (i, layer) in self.layers.iter().enumerate() {
            h = match layer {
                Layer::Conv { weight, bias } => conv2d(&h, weight, Some(bias), 3, 1, 1, 1)?,
                Layer::Relu => h.relu()?,
                Layer::Pool => pool2(&h)?,
            };
            if self.taps.contains(&i) {
                out.push(h.clone());
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_pyramid_has_three_taps_at_expected_scales() {
        let b = VggFeatures::random(0, DType::F32, &Device::Cpu).unwrap();
        let x = Tensor::zeros((2, 3, 64, 64), DType::F32, &Device::Cpu).unwrap();
        let f = b.features(&x).unwrap();
        assert_eq!(f.len(), 3);
        assert_eq!(f[0].dims(), &[2, 32, 32, 32]);
        assert_eq!(f[1].dims(), &[2, 64, 16, 16]);
        assert_eq!(f[2].dims(), &[2, 64, 8, 8]);
    }

    #[test]
    fn frozen_features_are_deterministic() {
        let a = VggFeatures::random(3, DType::F64, &Device::Cpu).unwrap();
        let b = VggFeatures::random(3, DType::F64, &Device::Cpu).unwrap();
        let x = Tensor::randn(0f64, 0.5, (1, 3, 16, 16), &Device::Cpu).unwrap();
        for (p, q) in a.features(&x).unwrap().iter().zip(b.features(&x).unwrap()) {
            let d = (p - q).unwrap().abs().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap();
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn tiny_inputs_pass_through_pooling() {
        let b = VggFeatures::random(0, DType::F64, &Device::Cpu).unwrap();
        let x = Tensor::zeros((1, 3, 4, 4), DType::F64, &Device::Cpu).unwrap();
        let f = b.features(&x).unwrap();
        assert_eq!(f[2].dims(), &[1, 64, 1, 1]);
    }
}
