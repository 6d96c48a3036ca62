//! Training objectives. All reductions use the per-element mean.

pub mod backbone;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use backbone::{FeatureExtractor, VggFeatures};

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// `Σ|pred − gt|·M / Σ M` where `M` is broadcast to the prediction shape.
/// Zero for an all-zero mask.
pub fn masked_l1(pred: &Tensor, gt: &Tensor, mask: &Tensor) -> Result<Tensor> {
    if pred.dims() != gt.dims() {
        return Err(Error::Contract(format!(
            "masked_l1: prediction {:?} vs target {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    let m = mask
        .broadcast_as(pred.shape())
        .map_err(|_| Error::Contract(format!("masked_l1: mask {:?} vs {:?}", mask.dims(), pred.dims())))?;
    let num = (pred - gt)?.abs()?.mul(&m)?.sum_all()?;
    let den = m.sum_all()?.maximum(1e-12)?;
    Ok(num.div(&den)?)
}

/// Mean absolute difference.
pub fn l1(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    Ok((pred - gt)?.abs()?.mean_all()?)
}

/// `Σᵢ mean|φᵢ(pred) − φᵢ(gt)|` over the backbone taps.
pub fn perceptual_loss(pred: &Tensor, gt: &Tensor, backbone: &dyn FeatureExtractor) -> Result<Tensor> {
    let fp = backbone.features(pred)?;
    let fg = backbone.features(&gt.detach())?;
    perceptual_from_features(&fp, &fg)
}

pub fn perceptual_from_features(fp: &[Tensor], fg: &[Tensor]) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for (a, b) in fp.iter().zip(fg) {
        let term = l1(a, b)?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::Contract("backbone produced no features".into()))
}

/// Gram matrices `F Fᵀ / (C·H·W)` of `B×C×H×W` features, `B×C×C`.
pub fn gram(features: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = features.dims4()?;
    let f = features.reshape((b, c, h * w))?;
    let g = f.matmul(&f.t()?)?;
    Ok((g / (c * h * w) as f64)?)
}

/// `Σᵢ mean|G(φᵢ(pred)) − G(φᵢ(gt))|`.
pub fn style_loss(pred: &Tensor, gt: &Tensor, backbone: &dyn FeatureExtractor) -> Result<Tensor> {
    let fp = backbone.features(pred)?;
    let fg = backbone.features(&gt.detach())?;
    style_from_features(&fp, &fg)
}

pub fn style_from_features(fp: &[Tensor], fg: &[Tensor]) -> Result<Tensor> {
    let gp = fp.iter().map(gram).collect::<Result<Vec<_>>>()?;
    let gg = fg.iter().map(gram).collect::<Result<Vec<_>>>()?;
    perceptual_from_features(&gp, &gg)
}

/// Generator hinge objective: `−mean(Ŷ)`.
pub fn gan_g_loss(fake_scores: &Tensor) -> Result<Tensor> {
    Ok(fake_scores.mean_all()?.neg()?)
}

/// Discriminator hinge objective: `mean(max(0, 1 − Y)) + mean(max(0, 1 + Ŷ))`.
pub fn gan_d_loss(real_scores: &Tensor, fake_scores: &Tensor) -> Result<Tensor> {
    if real_scores.dims() != fake_scores.dims() {
        return Err(Error::Contract(format!(
            "gan_d_loss: score maps {:?} vs {:?}",
            real_scores.dims(),
            fake_scores.dims()
        )));
    }
    let real = real_scores.affine(-1.0, 1.0)?.relu()?.mean_all()?;
    let fake = fake_scores.affine(1.0, 1.0)?.relu()?.mean_all()?;
    Ok((real + fake)?)
}

/// Mean absolute 5-point Laplacian `4d − (up + down + left + right)` over the
/// interior of a `B×1×H×W` depth map.
pub fn smoothness_loss(depth: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = depth.dims4()?;
    if h < 3 || w < 3 {
        return Err(Error::Contract(format!("smoothness_loss: {h}×{w} is smaller than 3×3")));
    }
    let at = |dy: usize, dx: usize| depth.narrow(2, dy, h - 2).and_then(|t| t.narrow(3, dx, w - 2));
    let center = at(1, 1)?;
    let neighbors = (((at(0, 1)? + at(2, 1)?)? + at(1, 0)?)? + at(1, 2)?)?;
    Ok(((center * 4.0)? - neighbors)?.abs()?.mean_all()?)
}

/// Weights of the refinement and depth terms; the coarse term has weight 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub image_l1: f64,
    pub image_perceptual: f64,
    pub image_style: f64,
    pub image_gan: f64,
    pub depth_l1: f64,
    pub depth_smoothness: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            image_l1: 1.0,
            image_perceptual: 0.3,
            image_style: 0.3,
            image_gan: 1.0,
            depth_l1: 0.01,
            depth_smoothness: 0.001,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.image_l1,
            self.image_perceptual,
            self.image_style,
            self.image_gan,
            self.depth_l1,
            self.depth_smoothness,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and nonnegative: {self:?}")));
        }
        Ok(())
    }
}

/// Individual generator-side loss terms; absent terms count as zero.
#[derive(Debug, Clone, Default)]
pub struct LossTerms {
    pub coarse_l1: Option<Tensor>,
    pub image_l1: Option<Tensor>,
    pub image_perceptual: Option<Tensor>,
    pub image_style: Option<Tensor>,
    pub image_gan: Option<Tensor>,
    pub depth_l1: Option<Tensor>,
    pub depth_smoothness: Option<Tensor>,
}

/// Scalar values of every term plus the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub coarse_l1: f64,
    pub image_l1: f64,
    pub image_perceptual: f64,
    pub image_style: f64,
    pub image_gan: f64,
    pub depth_l1: f64,
    pub depth_smoothness: f64,
    pub total: f64,
}

/// `L = L_coarse + Σ λ_k L_k`. Fails with [`Error::NonFinite`] naming the
/// first non-finite term.
pub fn total_loss(terms: &LossTerms, weights: &LossWeights) -> Result<(Tensor, LossBreakdown)> {
    let entries: [(&str, &Option<Tensor>, f64); 7] = [
        ("coarse_l1", &terms.coarse_l1, 1.0),
        ("image_l1", &terms.image_l1, weights.image_l1),
        ("image_perceptual", &terms.image_perceptual, weights.image_perceptual),
        ("image_style", &terms.image_style, weights.image_style),
        ("image_gan", &terms.image_gan, weights.image_gan),
        ("depth_l1", &terms.depth_l1, weights.depth_l1),
        ("depth_smoothness", &terms.depth_smoothness, weights.depth_smoothness),
    ];
    let mut values = [0.0f64; 7];
    let mut total: Option<Tensor> = None;
    for (i, (name, term, weight)) in entries.iter().enumerate() {
        let Some(t) = term else { continue };
        let v = scalar(t)?;
        if !v.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        values[i] = v;
        let weighted = (t * *weight)?;
        total = Some(match total {
            Some(acc) => (acc + weighted)?,
            None => weighted,
        });
    }
    let total = match total {
        Some(t) => t,
        None => return Err(Error::Contract("total_loss called without any terms".into())),
    };
    let total_value = scalar(&total)?;
    if !total_value.is_finite() {
        return Err(Error::NonFinite("total".into()));
    }
    let breakdown = LossBreakdown {
        coarse_l1: values[0],
        image_l1: values[1],
        image_perceptual: values[2],
        image_style: values[3],
        image_gan: values[4],
        depth_l1: values[5],
        depth_smoothness: values[6],
        total: total_value,
    };
    Ok((total, breakdown))
}
