mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "dynafill", version, about = "Recurrent RGB-D inpainting of dynamic objects")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration; replaces the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in configuration used when --config is absent.
    #[arg(long, global = true, value_enum, default_value_t = Preset::Default)]
    pub preset: Preset,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// Compute device; only `cpu` is built in.
    #[arg(long, global = true, default_value = "cpu")]
    pub device: String,
    /// Overrides the network width multiplier.
    #[arg(long, global = true)]
    pub model_scale: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Default,
    Overfit,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render toy sequences into the dataset layout.
    Generate,
    /// Train one stage, or all four in order.
    Train(TrainArgs),
    /// Score a model or saved predictions against the static ground truth.
    Eval(EvalArgs),
    /// Noise sweeps over mask, depth and odometry inputs.
    Ablate(AblateArgs),
    /// Aggregate a sequence into a colored PLY point cloud.
    Pointcloud(PointcloudArgs),
    /// Per-frame panels of inputs, coarse result, gate, refinement and depth.
    Visualize(VisualizeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// depth, coarse, refine, joint, or all.
    #[arg(long, value_parser = commands::parse_stages)]
    pub stage: commands::Stages,
    #[arg(long)]
    pub data: PathBuf,
    /// Overrides train.max_steps (for `all`, the preset schedule is used otherwise).
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Continue from the stage's last checkpoint.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct ModelSource {
    /// Checkpoint directory holding all networks (e.g. `<run>/joint/best`).
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory; mutually exclusive with --predictions.
    #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// Dataset-layout directory whose static side holds predictions.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// groundtruth, noisy:<p_n>, or external.
    #[arg(long, default_value = "groundtruth", value_parser = commands::parse_odometry)]
    pub odometry: dynafill::pipeline::OdometryMode,
    /// Disable the previous-frame branch (gate fixed to the current frame).
    #[arg(long)]
    pub no_feedback: bool,
    /// Also write the pipeline outputs in the dataset layout.
    #[arg(long)]
    pub save_outputs: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub source: ModelSource,
    /// mask, depth, odometry, or all.
    #[arg(long, default_value = "all")]
    pub kind: String,
    /// Comma-separated noise scales; defaults to eval.noise_grid.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct PointcloudArgs {
    /// Sequence directory in the dataset layout.
    #[arg(long)]
    pub sequence: PathBuf,
    /// Which side to lift: static (default) or dynamic.
    #[arg(long, default_value = "static")]
    pub side: String,
    /// Keep every n-th pixel in each direction.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    #[command(flatten)]
    pub source: ModelSource,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
