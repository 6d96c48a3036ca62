//! Pluggable image embeddings for Fréchet-style scores.

use candle_core::{DType, Device, Tensor};
use nalgebra::DVector;
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::metrics::{fit_gaussian, frechet_distance};
use crate::error::{Error, Result};
use crate::losses::{FeatureExtractor, VggFeatures};
use crate::nn::hwc_to_tensor;

/// A frozen map from an `H×W×3` image in `[-1, 1]` to a feature vector.
pub trait Embedder {
    /// Identity recorded next to every score computed with this embedder.
    fn id(&self) -> String;
    fn embed(&self, image: &Array3<f32>) -> Result<Vec<f64>>;
}

/// Global-average-pooled feature taps of a frozen backbone, concatenated.
pub struct BackboneEmbedder {
    backbone: Box<dyn FeatureExtractor>,
    device: Device,
}

impl BackboneEmbedder {
    pub fn new(backbone: Box<dyn FeatureExtractor>, device: Device) -> Self {
        Self { backbone, device }
    }

    /// VGG-16 from the weight cache if present, else the seeded random pyramid.
    pub fn default_for(seed: u64, device: &Device) -> Result<Self> {
        let backbone = VggFeatures::from_cache_or_random(seed, DType::F32, device)?;
        Ok(Self::new(Box::new(backbone), device.clone()))
    }
}

impl Embedder for BackboneEmbedder {
    fn id(&self) -> String {
        format!("gap[{}]", self.backbone.id())
    }

    fn embed(&self, image: &Array3<f32>) -> Result<Vec<f64>> {
        let x = hwc_to_tensor(image, &self.device)?;
        let mut out = Vec::new();
        for f in self.backbone.features(&x)? {
            let pooled: Tensor = f.mean(3)?.mean(2)?.squeeze(0)?.to_dtype(DType::F64)?;
            out.extend(pooled.to_vec1::<f64>()?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrechetScore {
    pub distance: f64,
    pub embedder: String,
    pub dimension: usize,
    pub real_samples: usize,
    pub fake_samples: usize,
    /// Covariance shrinkage applied to each side (nonzero when samples < dimension).
    pub real_shrinkage: f64,
    pub fake_shrinkage: f64,
}

/// Fits a Gaussian to the embeddings of each image set and returns their
/// Fréchet distance.
pub fn embed_and_frechet(real: &[Array3<f32>], fake: &[Array3<f32>], embedder: &dyn Embedder) -> Result<FrechetScore> {
    if real.len() < 2 || fake.len() < 2 {
        return Err(Error::Contract(format!(
            "Fréchet distance needs at least 2 samples per side, got {} and {}",
            real.len(),
            fake.len()
        )));
    }
    let er = real.iter().map(|x| embedder.embed(x)).collect::<Result<Vec<_>>>()?;
    let ef = fake.iter().map(|x| embedder.embed(x)).collect::<Result<Vec<_>>>()?;
    let gr = fit_gaussian(&er)?;
    let gf = fit_gaussian(&ef)?;
    let distance = frechet_distance(&gr.mean, &gr.cov, &gf.mean, &gf.cov)?;
    Ok(FrechetScore {
        distance,
        embedder: embedder.id(),
        dimension: gr.mean.len(),
        real_samples: real.len(),
        fake_samples: fake.len(),
        real_shrinkage: gr.shrinkage,
        fake_shrinkage: gf.shrinkage,
    })
}

/// Mean of a set of embeddings; handy for diagnostics.
pub fn mean_embedding(embeddings: &[Vec<f64>]) -> Option<DVector<f64>> {
    let d = embeddings.first()?.len();
    let mut m = DVector::zeros(d);
    for e in embeddings {
        m += DVector::from_column_slice(e);
    }
    Some(m / embeddings.len() as f64)
}
