//! Metrics, input-noise models, noise sweeps and gating visualizations.

pub mod embed;
pub mod metrics;
pub mod noise;
pub mod report;
pub mod sweep;
pub mod visualize;

pub use embed::{embed_and_frechet, BackboneEmbedder, Embedder, FrechetScore};
pub use metrics::{fit_gaussian, frechet_distance, l1_error, psnr, rmse_depth, ssim, GaussianFit};
pub use noise::{perturb_depth, perturb_mask, perturb_odometry, NoiseConfig};
pub use report::{write_reports, MetricsAccumulator, MetricsReport, ScopeMetrics};
pub use sweep::{evaluate_streams, evaluate_streams_with, noise_sweep, sweep_chart_svg, write_sweep_chart, SweepRow};
pub use visualize::{export_gating_visualization, gating_panel, jet, lanczos_resize, PanelInputs};
