use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use candle_core::{DType, Device};
use dynafill::config::Config;
use dynafill::dataset::io::sequence_dir;
use dynafill::dataset::{dataset_checksum, generate_dataset, load_sequence, load_split, SequencePair, SPLITS};
use dynafill::evaluation::{
    evaluate_streams_with, export_gating_visualization, noise_sweep, write_reports, write_sweep_chart,
    BackboneEmbedder, Embedder, MetricsAccumulator, MetricsReport, PanelInputs, SweepRow,
};
use dynafill::geometry::{aggregate_pointcloud, write_ply, PosedRgbd, MAX_DEPTH_M};
use dynafill::models::checkpoint::load_checkpoint;
use dynafill::models::{GateMode, ModelSet};
use dynafill::pipeline::{run_stream, save_stream, NoiseKind, OdometryMode, StreamOptions};
use dynafill::training::{run_stage, Stage};

use crate::manifest::{now_unix_s, RunManifest};
use crate::{AblateArgs, Cli, Command, EvalArgs, GlobalArgs, ModelSource, PointcloudArgs, Preset, TrainArgs, VisualizeArgs};

#[derive(Debug, Clone, PartialEq)]
pub enum Stages {
    One(Stage),
    All,
}

pub fn parse_stages(s: &str) -> std::result::Result<Stages, String> {
    if s == "all" {
        return Ok(Stages::All);
    }
    s.parse::<Stage>().map(Stages::One).map_err(|_| {
        format!("unknown stage `{s}` (expected depth, coarse, refine, joint or all)")
    })
}

pub fn parse_odometry(s: &str) -> std::result::Result<OdometryMode, String> {
    match s {
        "groundtruth" => Ok(OdometryMode::GroundTruth),
        "external" => Ok(OdometryMode::External),
        _ => {
            let p = s
                .strip_prefix("noisy:")
                .ok_or_else(|| format!("unknown odometry `{s}` (expected groundtruth, noisy:<p_n> or external)"))?;
            let p_n: f64 = p.parse().map_err(|_| format!("bad noise scale `{p}`"))?;
            if !(0.0..=1.0).contains(&p_n) {
                return Err(format!("noise scale {p_n} outside [0, 1]"));
            }
            Ok(OdometryMode::Noisy { p_n })
        }
    }
}

fn resolve_config(g: &GlobalArgs) -> Result<Config> {
    let mut cfg = match &g.config {
        Some(path) => Config::load(path)?,
        None => match g.preset {
            Preset::Default => Config::default(),
            Preset::Overfit => Config::overfit_preset(),
        },
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(scale) = g.model_scale {
        cfg.model.model_scale = scale;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn device(name: &str) -> Result<Device> {
    match name {
        "cpu" => Ok(Device::Cpu),
        other => bail!("device `{other}` is not available; this build supports `cpu` only"),
    }
}

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

/// Writes the resolved configuration next to the outputs.
fn write_config(out: &Path, cfg: &Config) -> Result<PathBuf> {
    let path = out.join("config.toml");
    std::fs::write(&path, cfg.to_toml_string()).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn load_models(cfg: &Config, checkpoint: &Path, device: &Device) -> Result<ModelSet> {
    let models = ModelSet::new(&cfg.model, cfg.seed, DType::F32, device)?;
    load_checkpoint(checkpoint, &models, None)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    Ok(models)
}

fn load_data(root: &Path, split: &str, cfg: &Config) -> Result<Vec<SequencePair>> {
    let data = load_split(root, split, &cfg.classes)
        .with_context(|| format!("loading split `{split}` from {}", root.display()))?;
    if data.is_empty() {
        bail!("split `{split}` under {} holds no sequences", root.display());
    }
    Ok(data)
}

fn embedder(cfg: &Config, device: &Device) -> Result<Option<BackboneEmbedder>> {
    Ok(if cfg.eval.frechet {
        Some(BackboneEmbedder::default_for(cfg.eval.embedder_seed, device)?)
    } else {
        None
    })
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    let cfg = resolve_config(g)?;
    let device = device(&g.device)?;
    let started = now_unix_s();
    let (name, outputs) = match &cli.command {
        Command::Generate => ("generate", generate(g, &cfg)?),
        Command::Train(a) => ("train", train(g, &cfg, a, &device)?),
        Command::Eval(a) => ("eval", eval(g, &cfg, a, &device)?),
        Command::Ablate(a) => ("ablate", ablate(g, &cfg, a, &device)?),
        Command::Pointcloud(a) => ("pointcloud", pointcloud(g, &cfg, a)?),
        Command::Visualize(a) => ("visualize", visualize(g, &cfg, a, &device)?),
    };
    let mut manifest = RunManifest::new(name, &cfg.hash(), cfg.seed, started);
    manifest.outputs = outputs;
    manifest.outputs.push(write_config(&g.out, &cfg)?);
    let path = manifest.finish(&g.out)?;
    println!("manifest: {}", path.display());
    Ok(())
}

fn generate(g: &GlobalArgs, cfg: &Config) -> Result<Vec<PathBuf>> {
    let out = &g.out;
    let non_empty = out.is_dir() && std::fs::read_dir(out)?.next().is_some();
    if non_empty && !g.force {
        bail!("{} is not empty; pass --force to overwrite", out.display());
    }
    if non_empty {
        for split in SPLITS {
            let dir = out.join(split);
            if dir.is_dir() {
                std::fs::remove_dir_all(&dir).with_context(|| format!("removing {}", dir.display()))?;
            }
        }
    }
    create_out(out)?;
    let generated = generate_dataset(cfg, out)?;
    let mut outputs = Vec::new();
    for s in &generated {
        println!("{}/{}: {} frames", s.split, s.id, s.frames);
        outputs.push(s.dir.clone());
    }
    let frames: usize = generated.iter().map(|s| s.frames).sum();
    println!("{} sequences, {frames} frames", generated.len());
    println!("checksum: {}", dataset_checksum(out)?);
    Ok(outputs)
}

fn train(g: &GlobalArgs, cfg: &Config, a: &TrainArgs, device: &Device) -> Result<Vec<PathBuf>> {
    let train = load_data(&a.data, "train", cfg)?;
    let val = load_data(&a.data, "val", cfg)?;
    let schedule: Vec<(Stage, u64)> = match a.stage {
        Stages::One(stage) => vec![(stage, a.max_steps.unwrap_or(cfg.train.max_steps))],
        Stages::All if a.max_steps.is_none() && g.config.is_none() && g.preset == Preset::Overfit => {
            Config::overfit_schedule().to_vec()
        }
        Stages::All => Stage::ALL
            .into_iter()
            .map(|s| (s, a.max_steps.unwrap_or(cfg.train.max_steps)))
            .collect(),
    };
    create_out(&g.out)?;
    let mut outputs = Vec::new();
    for (stage, steps) in schedule {
        let mut c = cfg.clone();
        c.train.max_steps = steps;
        c.train.resume = a.resume;
        let r = run_stage(&c, stage, &train, &val, &g.out, device)?;
        println!(
            "{}: {} steps, {} epochs, best validation {}{}",
            stage.name(),
            r.steps,
            r.epochs,
            r.best_validation.map_or("n/a".to_string(), |v| format!("{v:.5}")),
            if r.stopped_early { " (early stop)" } else { "" }
        );
        outputs.push(r.best_dir);
        outputs.push(r.last_dir);
    }
    Ok(outputs)
}

fn write_metric_files(out: &Path, stem: &str, rows: &[(String, MetricsReport)]) -> Result<Vec<PathBuf>> {
    let csv = out.join(format!("{stem}.csv"));
    let json = out.join(format!("{stem}.json"));
    write_reports(&csv, &json, rows)?;
    Ok(vec![csv, json])
}

fn print_report(label: &str, r: &MetricsReport) {
    println!(
        "{label}: frames {} | mask L1 {:.5} PSNR {:.3} SSIM {:.4} RMSE {:.3} m | full L1 {:.5} PSNR {:.3} SSIM {:.4} RMSE {:.3} m{}",
        r.frames,
        r.mask.l1,
        r.mask.psnr,
        r.mask.ssim,
        r.mask.depth_rmse_m,
        r.full.l1,
        r.full.psnr,
        r.full.ssim,
        r.full.depth_rmse_m,
        r.frechet.as_ref().map_or(String::new(), |f| format!(" | Frechet {:.4}", f.distance))
    );
}

fn eval(g: &GlobalArgs, cfg: &Config, a: &EvalArgs, device: &Device) -> Result<Vec<PathBuf>> {
    let data = load_data(&a.data, &a.split, cfg)?;
    create_out(&g.out)?;
    let emb = embedder(cfg, device)?;
    let emb_ref = emb.as_ref().map(|e| e as &dyn Embedder);
    let mut outputs = Vec::new();
    let report = match (&a.checkpoint, &a.predictions) {
        (Some(ckpt), _) => {
            let models = load_models(cfg, ckpt, device)?;
            let options = StreamOptions {
                odometry: a.odometry,
                gate_mode: if a.no_feedback { GateMode::Fixed(1.0) } else { GateMode::Learned },
                noise: cfg.noise.clone(),
                seed: cfg.seed,
                ..StreamOptions::default()
            };
            let out_root = g.out.join("outputs");
            let mut on_stream = |pair: &SequencePair, result: &dynafill::pipeline::StreamResult| {
                if a.save_outputs {
                    let dir = save_stream(&out_root, &a.split, result, &pair.id, pair.rig, &cfg.classes)?;
                    outputs.push(dir);
                }
                Ok(())
            };
            evaluate_streams_with(&models, &data, &cfg.classes, &options, emb_ref, device, &mut on_stream)?
        }
        (None, Some(pred_root)) => {
            let mut acc = MetricsAccumulator::new(emb_ref.is_some());
            for pair in &data {
                let pred = load_sequence(pred_root, &a.split, &pair.id, &cfg.classes)
                    .with_context(|| format!("loading predictions for `{}`", pair.id))?;
                if pred.len() != pair.len() {
                    bail!("predictions for `{}` hold {} frames, expected {}", pair.id, pred.len(), pair.len());
                }
                for ((p, gt), dynamic) in pred.static_frames.iter().zip(&pair.static_frames).zip(&pair.dynamic_frames) {
                    acc.push(&p.rgb_signed(), &gt.rgb_signed(), &p.depth, &gt.depth, &dynamic.mask)?;
                }
            }
            acc.finish(emb_ref)?
        }
        (None, None) => bail!("either --checkpoint or --predictions is required"),
    };
    print_report(&a.split, &report);
    outputs.extend(write_metric_files(&g.out, "metrics", &[(a.split.clone(), report)])?);
    Ok(outputs)
}

fn ablate(g: &GlobalArgs, cfg: &Config, a: &AblateArgs, device: &Device) -> Result<Vec<PathBuf>> {
    let kinds: Vec<NoiseKind> = if a.kind == "all" {
        NoiseKind::ALL.to_vec()
    } else {
        vec![a.kind.parse()?]
    };
    let grid = a.grid.clone().unwrap_or_else(|| cfg.eval.noise_grid.clone());
    let data = load_data(&a.source.data, &a.source.split, cfg)?;
    let models = load_models(cfg, &a.source.checkpoint, device)?;
    create_out(&g.out)?;
    let emb = embedder(cfg, device)?;
    let emb_ref = emb.as_ref().map(|e| e as &dyn Embedder);
    let base = StreamOptions {
        noise: cfg.noise.clone(),
        seed: cfg.seed,
        ..StreamOptions::default()
    };
    let mut rows: Vec<SweepRow> = Vec::new();
    for kind in kinds {
        rows.extend(noise_sweep(&models, &data, &cfg.classes, &grid, kind, &base, emb_ref, device)?);
    }
    for r in &rows {
        print_report(&r.label(), &r.report);
    }
    let table: Vec<(String, MetricsReport)> = rows.iter().map(|r| (r.label(), r.report.clone())).collect();
    let mut outputs = write_metric_files(&g.out, "sweep", &table)?;
    let svg = g.out.join("sweep.svg");
    write_sweep_chart(&svg, &rows)?;
    outputs.push(svg);
    Ok(outputs)
}

fn pointcloud(g: &GlobalArgs, cfg: &Config, a: &PointcloudArgs) -> Result<Vec<PathBuf>> {
    let seq = a.sequence.canonicalize().with_context(|| format!("sequence {}", a.sequence.display()))?;
    let name = |p: Option<&Path>| -> Result<String> {
        p.and_then(|p| p.file_name())
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| anyhow!("{} is not a <root>/<split>/<id> directory", seq.display()))
    };
    let id = name(Some(&seq))?;
    let split = name(seq.parent())?;
    let root = seq.parent().and_then(Path::parent).expect("split directory has a parent");
    debug_assert_eq!(sequence_dir(root, &split, &id), seq);
    let pair = load_sequence(root, &split, &id, &cfg.classes)?;
    let frames = match a.side.as_str() {
        "static" => &pair.static_frames,
        "dynamic" => &pair.dynamic_frames,
        other => bail!("unknown side `{other}` (expected static or dynamic)"),
    };
    let posed: Vec<PosedRgbd> = frames
        .iter()
        .map(|f| PosedRgbd {
            rgb: &f.rgb,
            depth: &f.depth,
            pose: f.pose,
        })
        .collect();
    let points = aggregate_pointcloud(&posed, &pair.rig.camera()?, a.stride, MAX_DEPTH_M);
    create_out(&g.out)?;
    let path = g.out.join("pointcloud.ply");
    write_ply(&path, &points)?;
    println!("{} points from {} frames -> {}", points.len(), frames.len(), path.display());
    Ok(vec![path])
}

fn visualize(g: &GlobalArgs, cfg: &Config, a: &VisualizeArgs, device: &Device) -> Result<Vec<PathBuf>> {
    let ModelSource { checkpoint, data, split } = &a.source;
    let data = load_data(data, split, cfg)?;
    let models = load_models(cfg, checkpoint, device)?;
    let options = StreamOptions {
        noise: cfg.noise.clone(),
        seed: cfg.seed,
        ..StreamOptions::default()
    };
    let mut outputs = Vec::new();
    for pair in &data {
        let result = run_stream(pair, &models, &cfg.classes, &options, device)?;
        let dir = g.out.join("panels").join(&pair.id);
        create_out(&dir)?;
        for (input, o) in result.inputs.iter().zip(&result.outputs) {
            let rgb = input.rgb_signed();
            let path = dir.join(format!("{:06}.png", input.index));
            export_gating_visualization(
                &path,
                &PanelInputs {
                    input_rgb: &rgb,
                    input_depth: &input.depth,
                    coarse: &o.coarse,
                    gate: &o.gate,
                    refined: &o.refined,
                    depth: &o.depth,
                },
            )?;
            outputs.push(path);
        }
        println!("{}: {} panels in {}", pair.id, result.outputs.len(), dir.display());
    }
    Ok(outputs)
}
