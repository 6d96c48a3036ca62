mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use common::rng;
use dynafill::config::Config;
use dynafill::dataset::augment::{augment, AugmentConfig, AugmentParams};
use dynafill::dataset::generate::{dataset_checksum, generate_dataset};
use dynafill::dataset::io::{load_sequence, load_split, save_sequence, sequence_dir};
use dynafill::dataset::toy::{generate_toy_sequence, ToyScene, ToySceneConfig, DYNAMIC_ID_BASE};
use dynafill::dataset::{extract_dynamic_mask, ClassConfig, Frame, SequencePair};
use dynafill::error::Error;
use dynafill::geometry::Pose6;
use ndarray::{Array2, Array3};
use proptest::prelude::*;
use rand::Rng;

fn small_toy() -> ToySceneConfig {
    ToySceneConfig {
        width: 48,
        height: 40,
        frames: 4,
        ..ToySceneConfig::default()
    }
}

fn toy(seed: u64) -> SequencePair {
    generate_toy_sequence(&small_toy(), &ClassConfig::default(), seed).unwrap()
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn save_load_round_trip_is_bit_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let classes = ClassConfig::default();
    let pair = toy(1);
    let dir = save_sequence(tmp.path(), "train", &pair).unwrap();
    assert_eq!(dir, sequence_dir(tmp.path(), "train", &pair.id));
    let loaded = load_sequence(tmp.path(), "train", &pair.id, &classes).unwrap();
    assert_eq!(loaded, pair);
    let first = read_tree(&dir);
    assert!(first.keys().any(|k| k.ends_with(".pfm")) && first.contains_key("camera.json"));

    let other = tempfile::tempdir().unwrap();
    let dir2 = save_sequence(other.path(), "train", &loaded).unwrap();
    assert_eq!(read_tree(&dir2), first);
}

#[test]
fn loaded_pairs_satisfy_alignment_invariants() {
    let tmp = tempfile::tempdir().unwrap();
    let classes = ClassConfig::default();
    for seed in [2, 3] {
        save_sequence(tmp.path(), "val", &toy(seed)).unwrap();
    }
    let split = load_split(tmp.path(), "val", &classes).unwrap();
    assert_eq!(split.len(), 2);
    assert!(split[0].id < split[1].id);
    for pair in &split {
        assert_eq!(pair.dynamic_frames.len(), pair.static_frames.len());
        for (t, (d, s)) in pair.dynamic_frames.iter().zip(&pair.static_frames).enumerate() {
            assert_eq!((d.index, s.index), (t, t));
            assert!(s.mask.iter().all(|&m| m == 0));
            let (dp, da) = d.pose.max_delta(&s.pose);
            assert!(dp <= 1e-6 && da <= 1e-6);
        }
    }
}

#[test]
fn static_frame_with_dynamic_pixels_is_an_alignment_error() {
    let tmp = tempfile::tempdir().unwrap();
    let classes = ClassConfig::default();
    let mut pair = toy(4);
    pair.static_frames[2].semantic[[5, 5]] = classes.dynamic_ids[0];
    save_sequence(tmp.path(), "train", &pair).unwrap();
    match load_sequence(tmp.path(), "train", &pair.id, &classes) {
        Err(Error::Alignment { frame, .. }) => assert_eq!(frame, 2),
        other => panic!("expected an alignment error, got {other:?}"),
    }
}

#[test]
fn pose_mismatch_is_an_alignment_error() {
    let tmp = tempfile::tempdir().unwrap();
    let classes = ClassConfig::default();
    let mut pair = toy(5);
    let p = pair.static_frames[1].pose;
    pair.static_frames[1].pose = Pose6::new(p.x + 1e-3, p.y, p.z, p.roll, p.pitch, p.yaw);
    save_sequence(tmp.path(), "train", &pair).unwrap();
    assert!(matches!(
        load_sequence(tmp.path(), "train", &pair.id, &classes),
        Err(Error::Alignment { frame: 1, .. })
    ));
}

#[test]
fn missing_modality_names_frame_and_modality() {
    let tmp = tempfile::tempdir().unwrap();
    let classes = ClassConfig::default();
    let pair = toy(6);
    let dir = save_sequence(tmp.path(), "test", &pair).unwrap();
    fs::remove_file(dir.join("depth_sta").join("000003.pfm")).unwrap();
    match load_sequence(tmp.path(), "test", &pair.id, &classes) {
        Err(Error::Load { frame, modality, .. }) => {
            assert_eq!(frame, 3);
            assert_eq!(modality, "depth_sta");
        }
        other => panic!("expected a load error, got {other:?}"),
    }
}

#[test]
fn generator_output_loads_with_equal_frame_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let classes = ClassConfig::default();
    let pair = toy(7);
    save_sequence(tmp.path(), "train", &pair).unwrap();
    let loaded = load_sequence(tmp.path(), "train", &pair.id, &classes).unwrap();
    assert_eq!(loaded.dynamic_frames.len(), small_toy().frames);
    assert_eq!(loaded.static_frames.len(), small_toy().frames);
}

#[test]
fn generator_is_deterministic_and_seeded() {
    assert_eq!(toy(8), toy(8));
    assert_ne!(toy(8).dynamic_frames[0].rgb, toy(9).dynamic_frames[0].rgb);
}

#[test]
fn no_dynamic_objects_gives_identical_streams() {
    let cfg = ToySceneConfig {
        vehicles: 0,
        pedestrians: 0,
        ..small_toy()
    };
    let pair = generate_toy_sequence(&cfg, &ClassConfig::default(), 10).unwrap();
    for (d, s) in pair.dynamic_frames.iter().zip(&pair.static_frames) {
        assert_eq!(d, s);
    }
}

#[test]
fn masks_match_the_object_id_buffer() {
    let classes = ClassConfig::default();
    let cfg = small_toy();
    for seed in [11, 12, 13] {
        let pair = generate_toy_sequence(&cfg, &classes, seed).unwrap();
        let scene = ToyScene::sample(&cfg, &classes, seed).unwrap();
        let mut any = false;
        for (t, (d, s)) in pair.dynamic_frames.iter().zip(&pair.static_frames).enumerate() {
            let ids = scene.render(t, true).object_ids;
            let oracle = ids.mapv(|id| (id >= DYNAMIC_ID_BASE) as u8);
            assert_eq!(d.mask, oracle);
            assert_eq!(d.mask, extract_dynamic_mask(&d.semantic, &classes.dynamic_ids));
            for ((v, u), &m) in d.mask.indexed_iter() {
                if m == 1 {
                    any = true;
                    // Occluders are nearer than the background they hide.
                    assert!(d.depth[[v, u]] <= s.depth[[v, u]]);
                }
            }
        }
        assert!(any, "seed {seed} rendered no dynamic pixels");
    }
}

#[test]
fn dynamic_objects_darken_the_ground_outside_their_masks() {
    let classes = ClassConfig::default();
    let pair = generate_toy_sequence(&ToySceneConfig::default(), &classes, 14).unwrap();
    let mut shadowed = 0;
    for (d, s) in pair.dynamic_frames.iter().zip(&pair.static_frames) {
        for ((v, u), &m) in d.mask.indexed_iter() {
            let ground = s.semantic[[v, u]] == classes.road_id || s.semantic[[v, u]] == classes.sidewalk_id;
            if m == 0 && ground && d.rgb[[v, u, 0]] < s.rgb[[v, u, 0]] {
                shadowed += 1;
            }
        }
    }
    assert!(shadowed > 0);
}

#[test]
fn zero_frames_or_empty_images_are_config_errors() {
    let classes = ClassConfig::default();
    for cfg in [
        ToySceneConfig { frames: 0, ..small_toy() },
        ToySceneConfig { width: 0, ..small_toy() },
    ] {
        assert!(matches!(generate_toy_sequence(&cfg, &classes, 0), Err(Error::Config(_))));
    }
}

#[test]
fn dataset_checksum_is_deterministic() {
    let mut cfg = Config::default();
    cfg.toy = small_toy();
    cfg.splits.train = 2;
    cfg.splits.val = 1;
    cfg.splits.test = 1;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let generated = generate_dataset(&cfg, a.path()).unwrap();
    assert_eq!(generated.len(), 4);
    generate_dataset(&cfg, b.path()).unwrap();
    let sum = dataset_checksum(a.path()).unwrap();
    assert_eq!(sum, dataset_checksum(b.path()).unwrap());
    assert_eq!(sum.len(), 64);
    fs::write(a.path().join("notes.txt"), "ignored").unwrap();
    assert_eq!(dataset_checksum(a.path()).unwrap(), sum);
    cfg.seed = 1;
    let c = tempfile::tempdir().unwrap();
    generate_dataset(&cfg, c.path()).unwrap();
    assert_ne!(dataset_checksum(c.path()).unwrap(), sum);
}

fn random_frame(r: &mut impl Rng, h: usize, w: usize) -> Frame {
    let semantic = Array2::from_shape_fn((h, w), |_| r.gen_range(0..13u8));
    Frame {
        rgb: Array3::from_shape_fn((h, w, 3), |_| r.gen()),
        depth: Array2::from_shape_fn((h, w), |_| r.gen_range(0.0..=1.0)),
        mask: extract_dynamic_mask(&semantic, &[10, 11]),
        semantic,
        pose: Pose6::new(1.0, 2.0, 0.5, 0.0, 0.1, 0.2),
        index: 0,
    }
}

#[test]
fn identity_augmentation_is_the_identity() {
    let mut r = rng(40);
    let (d, s) = (random_frame(&mut r, 9, 11), random_frame(&mut r, 9, 11));
    let (ad, as_, params) = augment(&d, &s, &AugmentConfig::identity(), &mut r);
    assert_eq!(params, AugmentParams::identity());
    assert_eq!((ad, as_), (d, s));
}

#[test]
fn double_flip_restores_every_modality() {
    let mut r = rng(41);
    let f = random_frame(&mut r, 9, 11);
    let flip = AugmentParams {
        flip: true,
        ..AugmentParams::identity()
    };
    let once = flip.apply(&f);
    assert_ne!(once.rgb, f.rgb);
    assert_eq!(once.depth[[3, 0]], f.depth[[3, 10]]);
    assert_eq!(once.mask, extract_dynamic_mask(&once.semantic, &[10, 11]));
    assert_eq!(flip.apply(&once), f);
}

#[test]
fn brightness_scales_a_gray_image() {
    let mut r = rng(42);
    let mut f = random_frame(&mut r, 6, 7);
    for level in [40u8, 128, 230] {
        f.rgb.fill(level);
        for b in [0.7, 1.1, 1.3] {
            let p = AugmentParams {
                brightness: b,
                ..AugmentParams::identity()
            };
            let out = p.apply(&f);
            let expect = ((level as f64 / 255.0 * b).clamp(0.0, 1.0) * 255.0).round() as u8;
            assert!(out.rgb.iter().all(|&x| x == expect), "level {level}, b {b}");
            assert_eq!(out.depth, f.depth);
        }
    }
}

#[test]
fn paired_frames_share_one_parameter_draw() {
    let mut r = rng(43);
    let f = random_frame(&mut r, 8, 8);
    let cfg = AugmentConfig {
        flip_probability: 1.0,
        ..AugmentConfig::default()
    };
    let (a, b, params) = augment(&f, &f, &cfg, &mut r);
    assert!(params.flip);
    assert_eq!(a, b);
    assert_eq!(a.depth, params.apply(&f).depth);
    AugmentConfig::default().validate().unwrap();
    let bad = AugmentConfig {
        hue_range: [-0.1, 0.2],
        ..AugmentConfig::default()
    };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dynamic_mask_matches_membership(seed in 0u64..100_000, ids in prop::collection::btree_set(0u8..16, 0..5)) {
        let mut r = rng(seed);
        let sem = Array2::from_shape_fn((16, 16), |_| r.gen_range(0..16u8));
        let ids: Vec<u8> = ids.into_iter().collect();
        let mask = extract_dynamic_mask(&sem, &ids);
        for (p, &m) in mask.indexed_iter() {
            prop_assert_eq!(m == 1, ids.contains(&sem[p]));
            prop_assert!(m <= 1);
        }
    }

    #[test]
    fn augmentation_preserves_frame_invariants(seed in 0u64..100_000) {
        let mut r = rng(seed);
        let f = random_frame(&mut r, 7, 9);
        let params = AugmentParams::sample(&AugmentConfig::default(), &mut r);
        let out = params.apply(&f);
        prop_assert!(out.validate(13).is_ok());
        prop_assert_eq!(out.mask, extract_dynamic_mask(&out.semantic, &[10, 11]));
        if !params.flip {
            prop_assert_eq!(out.depth, f.depth);
        }
    }
}
