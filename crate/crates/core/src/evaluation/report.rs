//! Aggregated metric reports and their CSV/JSON serialization.

use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::embed::{embed_and_frechet, Embedder};
use super::metrics::{l1_error, psnr, rmse_depth, ssim};
use crate::error::{Error, Result};

/// Serializes non-finite floats as the strings `"+inf"`, `"-inf"`, `"nan"`.
pub mod sentinel {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&to_string(*x))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(serde::Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) => from_str(&s).ok_or_else(|| serde::de::Error::custom(format!("bad float `{s}`"))),
        }
    }

    pub fn to_string(x: f64) -> String {
        if x.is_nan() {
            "nan".into()
        } else if x == f64::INFINITY {
            "+inf".into()
        } else if x == f64::NEG_INFINITY {
            "-inf".into()
        } else {
            format!("{x}")
        }
    }

    pub fn from_str(s: &str) -> Option<f64> {
        match s {
            "nan" => Some(f64::NAN),
            "+inf" | "inf" => Some(f64::INFINITY),
            "-inf" => Some(f64::NEG_INFINITY),
            _ => s.parse().ok(),
        }
    }
}

/// Metrics over one evaluation scope. `l1` is on the `[0, 1]` scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScopeMetrics {
    #[serde(with = "sentinel")]
    pub l1: f64,
    #[serde(with = "sentinel")]
    pub psnr: f64,
    #[serde(with = "sentinel")]
    pub ssim: f64,
    /// Depth RMSE in meters.
    #[serde(with = "sentinel")]
    pub depth_rmse_m: f64,
}

/// Frame-averaged metrics for the inpainted region and the whole image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub frames: usize,
    /// Mask-only scope (inpainting task). Frames with an empty mask are skipped.
    pub mask: ScopeMetrics,
    /// Whole-image scope (image-to-image task).
    pub full: ScopeMetrics,
    /// Fréchet distance between embeddings of predicted and ground-truth
    /// frames; comparable only between runs with the same embedder.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frechet: Option<super::embed::FrechetScore>,
}

#[derive(Default)]
struct Running {
    sum: f64,
    n: usize,
}

impl Running {
    fn push(&mut self, x: f64) {
        if !x.is_nan() {
            self.sum += x;
            self.n += 1;
        }
    }

    fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }
}

#[derive(Default)]
struct ScopeAccumulator {
    l1: Running,
    psnr: Running,
    ssim: Running,
    rmse: Running,
}

impl ScopeAccumulator {
    fn finish(&self) -> ScopeMetrics {
        ScopeMetrics {
            l1: self.l1.mean(),
            psnr: self.psnr.mean(),
            ssim: self.ssim.mean(),
            depth_rmse_m: self.rmse.mean(),
        }
    }
}

/// Collects per-frame metrics; optionally keeps frames for a Fréchet score.
#[derive(Default)]
pub struct MetricsAccumulator {
    mask: ScopeAccumulator,
    full: ScopeAccumulator,
    frames: usize,
    keep_images: bool,
    predicted: Vec<Array3<f32>>,
    reference: Vec<Array3<f32>>,
}

impl MetricsAccumulator {
    pub fn new(keep_images: bool) -> Self {
        Self {
            keep_images,
            ..Self::default()
        }
    }

    /// Adds one frame. Images are `[-1, 1]`, depths normalized, `mask` is
    /// the region that was inpainted.
    pub fn push(
        &mut self,
        pred_rgb: &Array3<f32>,
        gt_rgb: &Array3<f32>,
        pred_depth: &Array2<f32>,
        gt_depth: &Array2<f32>,
        mask: &Array2<u8>,
    ) -> Result<()> {
        let all = Array2::from_elem(mask.dim(), 1u8);
        self.full.l1.push(l1_error(pred_rgb, gt_rgb, None)?);
        self.full.psnr.push(psnr(pred_rgb, gt_rgb, None)?);
        self.full.ssim.push(ssim(pred_rgb, gt_rgb, None)?);
        self.full.rmse.push(rmse_depth(pred_depth, gt_depth, &all)?);
        if mask.iter().any(|&m| m != 0) {
            self.mask.l1.push(l1_error(pred_rgb, gt_rgb, Some(mask))?);
            self.mask.psnr.push(psnr(pred_rgb, gt_rgb, Some(mask))?);
            self.mask.ssim.push(ssim(pred_rgb, gt_rgb, Some(mask))?);
            self.mask.rmse.push(rmse_depth(pred_depth, gt_depth, mask)?);
        }
        if self.keep_images {
            self.predicted.push(pred_rgb.clone());
            self.reference.push(gt_rgb.clone());
        }
        self.frames += 1;
        Ok(())
    }

    pub fn finish(self, embedder: Option<&dyn Embedder>) -> Result<MetricsReport> {
        let frechet = match embedder {
            Some(e) if self.keep_images && self.frames >= 2 => Some(embed_and_frechet(&self.reference, &self.predicted, e)?),
            _ => None,
        };
        Ok(MetricsReport {
            frames: self.frames,
            mask: self.mask.finish(),
            full: self.full.finish(),
            frechet,
        })
    }
}

pub const CSV_HEADER: [&str; 9] = [
    "label",
    "mask_l1",
    "mask_psnr",
    "mask_ssim",
    "mask_depth_rmse_m",
    "full_l1",
    "full_psnr",
    "full_ssim",
    "full_depth_rmse_m",
];

impl MetricsReport {
    pub fn csv_row(&self, label: &str) -> Vec<String> {
        let f = sentinel::to_string;
        vec![
            label.to_string(),
            f(self.mask.l1),
            f(self.mask.psnr),
            f(self.mask.ssim),
            f(self.mask.depth_rmse_m),
            f(self.full.l1),
            f(self.full.psnr),
            f(self.full.ssim),
            f(self.full.depth_rmse_m),
        ]
    }
}

/// Writes labelled reports as CSV (one row each) and as a JSON array.
pub fn write_reports(csv_path: &Path, json_path: &Path, rows: &[(String, MetricsReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path).map_err(|e| Error::Parse(format!("{}: {e}", csv_path.display())))?;
    let mut header: Vec<String> = CSV_HEADER.iter().map(|s| s.to_string()).collect();
    header.push("frechet".into());
    w.write_record(&header).map_err(|e| Error::Parse(e.to_string()))?;
    for (label, r) in rows {
        let mut rec = r.csv_row(label);
        rec.push(r.frechet.as_ref().map(|f| sentinel::to_string(f.distance)).unwrap_or_default());
        w.write_record(&rec).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(csv_path, e))?;
    #[derive(Serialize)]
    struct Row<'a> {
        label: &'a str,
        #[serde(flatten)]
        report: &'a MetricsReport,
    }
    let json: Vec<Row> = rows.iter().map(|(l, r)| Row { label: l, report: r }).collect();
    let text = serde_json::to_string_pretty(&json)?;
    std::fs::write(json_path, text + "\n").map_err(|e| Error::io(json_path, e))
}
