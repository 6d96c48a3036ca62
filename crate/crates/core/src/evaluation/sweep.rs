//! Split evaluation and noise sweeps over frozen models.

use std::path::Path;

use candle_core::Device;
use serde::{Deserialize, Serialize};

use super::embed::Embedder;
use super::noise::check_noise_scale;
use super::report::{MetricsAccumulator, MetricsReport};
use super::visualize::{line_chart_svg, Series};
use crate::dataset::{ClassConfig, SequencePair};
use crate::error::{Error, Result};
use crate::models::ModelSet;
use crate::pipeline::{run_stream, NoiseKind, OdometryMode, StreamOptions, StreamResult};

/// Streams every sequence of `data` through the pipeline and scores the
/// refined image and completed depth against the static ground truth.
/// The mask scope is always the recorded dynamic mask, so rows with
/// perturbed input masks stay comparable.
pub fn evaluate_streams(
    models: &ModelSet,
    data: &[SequencePair],
    classes: &ClassConfig,
    options: &StreamOptions,
    embedder: Option<&dyn Embedder>,
    device: &Device,
) -> Result<MetricsReport> {
    evaluate_streams_with(models, data, classes, options, embedder, device, &mut |_, _| Ok(()))
}

/// [`evaluate_streams`] that also hands every stream result to `on_stream`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_streams_with(
    models: &ModelSet,
    data: &[SequencePair],
    classes: &ClassConfig,
    options: &StreamOptions,
    embedder: Option<&dyn Embedder>,
    device: &Device,
    on_stream: &mut dyn FnMut(&SequencePair, &StreamResult) -> Result<()>,
) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::Config("evaluation split has no sequences".into()));
    }
    let mut acc = MetricsAccumulator::new(embedder.is_some());
    for (i, pair) in data.iter().enumerate() {
        let opts = StreamOptions {
            seed: options.seed.wrapping_add(i as u64),
            ..options.clone()
        };
        let result = run_stream(pair, models, classes, &opts, device)?;
        for ((out, gt), dynamic) in result.outputs.iter().zip(&pair.static_frames).zip(&pair.dynamic_frames) {
            acc.push(&out.refined, &gt.rgb_signed(), &out.depth, &gt.depth, &dynamic.mask)?;
        }
        on_stream(pair, &result)?;
    }
    acc.finish(embedder)
}

/// One grid point of a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub kind: NoiseKind,
    pub p_n: f64,
    pub report: MetricsReport,
}

impl SweepRow {
    pub fn label(&self) -> String {
        format!("{}@{}", self.kind.name(), self.p_n)
    }
}

/// Evaluates `data` once per noise scale in `grid`, corrupting the input
/// named by `kind`. All other settings come from `base`.
#[allow(clippy::too_many_arguments)]
pub fn noise_sweep(
    models: &ModelSet,
    data: &[SequencePair],
    classes: &ClassConfig,
    grid: &[f64],
    kind: NoiseKind,
    base: &StreamOptions,
    embedder: Option<&dyn Embedder>,
    device: &Device,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::Config("noise grid is empty".into()));
    }
    for &p in grid {
        check_noise_scale(p)?;
    }
    grid.iter()
        .map(|&p_n| {
            let mut opts = base.clone();
            match kind {
                NoiseKind::Odometry => {
                    opts.odometry = OdometryMode::Noisy { p_n };
                    opts.input_noise = None;
                }
                NoiseKind::Mask | NoiseKind::Depth => {
                    opts.odometry = OdometryMode::GroundTruth;
                    opts.input_noise = Some((kind, p_n));
                }
            }
            let report = evaluate_streams(models, data, classes, &opts, embedder, device)?;
            Ok(SweepRow { kind, p_n, report })
        })
        .collect()
}

/// Full-image L1 against `p_n`, one series per noise kind.
pub fn sweep_chart_svg(rows: &[SweepRow]) -> String {
    let series: Vec<Series> = NoiseKind::ALL
        .into_iter()
        .filter_map(|kind| {
            let points: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.kind == kind)
                .map(|r| (r.p_n, r.report.full.l1))
                .collect();
            (!points.is_empty()).then(|| Series {
                label: kind.name().to_string(),
                points,
            })
        })
        .collect();
    line_chart_svg("Effect of noisy inputs", "p_n", "L1 (full image)", &series)
}

pub fn write_sweep_chart(path: &Path, rows: &[SweepRow]) -> Result<()> {
    std::fs::write(path, sweep_chart_svg(rows)).map_err(|e| Error::io(path, e))
}
