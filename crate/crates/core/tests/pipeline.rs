use candle_core::{DType, Device};
use dynafill::config::Config;
use dynafill::dataset::io::load_sequence;
use dynafill::dataset::toy::{generate_toy_sequence, ToySceneConfig};
use dynafill::dataset::{signed_to_u8, Frame, SequencePair};
use dynafill::error::Error;
use dynafill::geometry::RigidTransform;
use dynafill::models::checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
use dynafill::models::{GateMode, ModelConfig, ModelSet, NetworkKind};
use dynafill::pipeline::odometry::{GroundTruthOdometry, OdometryMode};
use dynafill::pipeline::{run_stream, save_stream, Pipeline, StepOutput, StreamOptions, TIMING_FILE};
use nalgebra::Matrix3;
use ndarray::Array2;

fn setup(seed: u64) -> (Config, SequencePair, ModelSet) {
    let mut cfg = Config::overfit_preset();
    cfg.toy = ToySceneConfig {
        width: 32,
        height: 32,
        frames: 4,
        ..ToySceneConfig::default()
    };
    let pair = generate_toy_sequence(&cfg.toy, &cfg.classes, seed).unwrap();
    let models = ModelSet::new(&cfg.model, seed, DType::F32, &Device::Cpu).unwrap();
    (cfg, pair, models)
}

fn near_identity(t: &RigidTransform, tol: f64) -> bool {
    (t.rotation - Matrix3::identity()).abs().max() <= tol && t.translation.abs().max() <= tol
}

fn same_outputs(a: &StepOutput, b: &StepOutput) -> bool {
    a.coarse == b.coarse
        && a.refined == b.refined
        && a.depth == b.depth
        && a.gate == b.gate
        && a.warped_prev == b.warped_prev
        && a.visibility == b.visibility
}

#[test]
fn empty_mask_passes_through_coarse_and_depth() {
    let (_, pair, models) = setup(1);
    let cam = pair.rig.camera().unwrap();
    let mut p = Pipeline::new(&models, cam, GateMode::Learned, &Device::Cpu);
    let mut frame = pair.dynamic_frames[0].clone();
    frame.mask = Array2::zeros(frame.dims());
    let out = p.step(&frame, &mut GroundTruthOdometry).unwrap();
    assert_eq!(out.coarse, frame.rgb_signed());
    assert_eq!(out.depth, frame.depth);
    assert_eq!(out.refined.dim(), frame.rgb_signed().dim());
}

#[test]
fn first_frame_populates_the_state() {
    let (_, pair, models) = setup(2);
    let cam = pair.rig.camera().unwrap();
    let mut p = Pipeline::new(&models, cam, GateMode::Learned, &Device::Cpu);
    assert!(p.state.is_empty());
    let out = p.step(&pair.dynamic_frames[0], &mut GroundTruthOdometry).unwrap();
    assert!(!p.state.is_empty());
    assert!(out.transform.is_identity());
    assert!(out.warped_prev.iter().all(|&x| x == 0.0));
    assert!(out.visibility.iter().all(|&v| v == 0));
    assert!(out.refined.iter().all(|x| (-1.0..=1.0).contains(x)));
    assert!(out.depth.iter().all(|x| (0.0..=1.0).contains(x)));
    assert_eq!(out.gate.dim(), (4, 4));
    let prev = p.state.prev.as_ref().unwrap();
    assert_eq!(prev.rgb, out.refined);
    assert_eq!(prev.depth, out.depth);
    p.reset();
    assert!(p.state.is_empty());
}

#[test]
fn repeated_frame_warps_to_the_previous_output() {
    let (_, pair, models) = setup(3);
    let cam = pair.rig.camera().unwrap();
    for k in [0, 2] {
        let mut p = Pipeline::new(&models, cam, GateMode::Learned, &Device::Cpu);
        let frame = &pair.dynamic_frames[k];
        let first = p.step(frame, &mut GroundTruthOdometry).unwrap();
        let second = p.step(&Frame { index: k + 1, ..frame.clone() }, &mut GroundTruthOdometry).unwrap();
        assert!(near_identity(&second.transform, 1e-12));
        assert_eq!(second.warped_prev, first.refined);
        assert!(second.visibility.iter().all(|&v| v == 1));
    }
}

#[test]
fn streams_are_deterministic_and_reset_is_stateless() {
    let (cfg, pair, models) = setup(4);
    let other = generate_toy_sequence(&cfg.toy, &cfg.classes, 40).unwrap();
    let opts = StreamOptions::default();
    let a = run_stream(&pair, &models, &cfg.classes, &opts, &Device::Cpu).unwrap();
    let b = run_stream(&pair, &models, &cfg.classes, &opts, &Device::Cpu).unwrap();
    assert_eq!(a.outputs.len(), pair.len());
    assert!(a.outputs.iter().zip(&b.outputs).all(|(x, y)| same_outputs(x, y)));

    let cam = pair.rig.camera().unwrap();
    let mut p = Pipeline::new(&models, cam, GateMode::Learned, &Device::Cpu);
    for f in &other.dynamic_frames {
        p.step(f, &mut GroundTruthOdometry).unwrap();
    }
    p.reset();
    for (f, expect) in pair.dynamic_frames.iter().zip(&a.outputs) {
        assert!(same_outputs(&p.step(f, &mut GroundTruthOdometry).unwrap(), expect));
    }
    // Without a reset the carried state leaks into the next sequence.
    let leaked = p.step(&pair.dynamic_frames[0], &mut GroundTruthOdometry).unwrap();
    assert!(!same_outputs(&leaked, &a.outputs[0]));
}

#[test]
fn failing_odometry_falls_back_to_identity() {
    let (cfg, pair, models) = setup(5);
    let opts = StreamOptions {
        odometry: OdometryMode::External,
        ..StreamOptions::default()
    };
    let r = run_stream(&pair, &models, &cfg.classes, &opts, &Device::Cpu).unwrap();
    assert!(r.outputs.iter().all(|o| o.transform.is_identity()));
    let gt = run_stream(&pair, &models, &cfg.classes, &StreamOptions::default(), &Device::Cpu).unwrap();
    assert!(!near_identity(&gt.outputs[1].transform, 1e-9));
}

#[test]
fn zero_odometry_noise_matches_ground_truth() {
    let (cfg, pair, models) = setup(6);
    let noisy = StreamOptions {
        odometry: OdometryMode::Noisy { p_n: 0.0 },
        ..StreamOptions::default()
    };
    let a = run_stream(&pair, &models, &cfg.classes, &noisy, &Device::Cpu).unwrap();
    let b = run_stream(&pair, &models, &cfg.classes, &StreamOptions::default(), &Device::Cpu).unwrap();
    assert!(a.outputs.iter().zip(&b.outputs).all(|(x, y)| same_outputs(x, y)));
}

#[test]
fn saved_streams_load_as_sequences() {
    let (cfg, pair, models) = setup(7);
    let r = run_stream(&pair, &models, &cfg.classes, &StreamOptions::default(), &Device::Cpu).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let dir = save_stream(tmp.path(), "pred", &r, &pair.id, pair.rig, &cfg.classes).unwrap();
    assert!(dir.join(TIMING_FILE).is_file());
    let loaded = load_sequence(tmp.path(), "pred", &pair.id, &cfg.classes).unwrap();
    assert_eq!(loaded.len(), pair.len());
    assert_eq!(loaded.dynamic_frames, pair.dynamic_frames);
    for (s, o) in loaded.static_frames.iter().zip(&r.outputs) {
        assert_eq!(s.rgb, o.refined.mapv(signed_to_u8));
        assert_eq!(s.depth, o.depth);
        assert!(s.semantic.iter().all(|l| !cfg.classes.dynamic_ids.contains(l)));
    }
    assert_eq!(r.timing.frames, pair.len());
    assert!(r.timing.mean_ms > 0.0);
}

#[test]
fn mismatched_inputs_are_rejected() {
    let (cfg, pair, models) = setup(8);
    let mut cam = pair.rig.camera().unwrap();
    cam.width = 64;
    let mut p = Pipeline::new(&models, cam, GateMode::Learned, &Device::Cpu);
    assert!(matches!(p.step(&pair.dynamic_frames[0], &mut GroundTruthOdometry), Err(Error::Contract(_))));

    let tmp = tempfile::tempdir().unwrap();
    let manifest = CheckpointManifest::new(&cfg.model, &cfg.hash(), "joint", NetworkKind::ALL.to_vec());
    save_checkpoint(tmp.path(), &manifest, &models).unwrap();
    let bigger = ModelConfig {
        model_scale: 0.125,
        ..cfg.model.clone()
    };
    let other = ModelSet::new(&bigger, 0, DType::F32, &Device::Cpu).unwrap();
    assert!(matches!(load_checkpoint(tmp.path(), &other, None), Err(Error::Checkpoint(_))));
    let same = ModelSet::new(&cfg.model, 99, DType::F32, &Device::Cpu).unwrap();
    load_checkpoint(tmp.path(), &same, None).unwrap();
    let a = run_stream(&pair, &models, &cfg.classes, &StreamOptions::default(), &Device::Cpu).unwrap();
    let b = run_stream(&pair, &same, &cfg.classes, &StreamOptions::default(), &Device::Cpu).unwrap();
    assert!(a.outputs.iter().zip(&b.outputs).all(|(x, y)| same_outputs(x, y)));
}
