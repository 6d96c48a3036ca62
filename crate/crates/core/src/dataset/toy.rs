//! Procedural street scenes rendered twice per timestep: once with moving
//! vehicles and pedestrians (which also cast hard shadows on the ground) and
//! once without them. Rendering is per-pixel ray casting against a ground
//! plane and axis-aligned boxes with a nearest-hit depth test, so depth,
//! labels and masks are exact.

use nalgebra::{Rotation3, Vector3};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CameraRig, ClassConfig, Frame, SequencePair};
use crate::error::{Error, Result};
use crate::geometry::pose::{body_from_optical, pose_from_world_camera};
use crate::geometry::{world_from_camera, CameraModel, Pose6, RigidTransform, MAX_DEPTH_M};

/// First object id used for dynamic objects in the id buffer.
pub const DYNAMIC_ID_BASE: u32 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySceneConfig {
    pub width: usize,
    pub height: usize,
    pub fov_degrees: f64,
    pub frames: usize,
    pub frame_interval_s: f64,
    pub ego_speed_mps: f64,
    pub yaw_amplitude_deg: f64,
    pub vehicles: usize,
    pub pedestrians: usize,
    pub buildings_per_side: usize,
    pub road_half_width: f64,
    pub sidewalk_width: f64,
    /// Multiplier applied to shadowed ground color.
    pub shadow_factor: f64,
    pub mount_translation: [f64; 3],
}

impl Default for ToySceneConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            fov_degrees: 90.0,
            frames: 8,
            frame_interval_s: 0.1,
            ego_speed_mps: 6.0,
            yaw_amplitude_deg: 3.0,
            vehicles: 2,
            pedestrians: 1,
            buildings_per_side: 5,
            road_half_width: 3.5,
            sidewalk_width: 2.5,
            shadow_factor: 0.55,
            mount_translation: [2.0, 0.0, 1.8],
        }
    }
}

impl ToySceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::Config("toy scene needs at least one frame".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config(format!(
                "toy scene image size {}x{} is empty",
                self.width, self.height
            )));
        }
        if !(self.fov_degrees > 0.0 && self.fov_degrees < 180.0) {
            return Err(Error::Config(format!("bad field of view {}", self.fov_degrees)));
        }
        Ok(())
    }

    pub fn rig(&self) -> CameraRig {
        CameraRig {
            width: self.width,
            height: self.height,
            fov_degrees: self.fov_degrees,
            mount_translation: self.mount_translation,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vector3<f64>,
    max: Vector3<f64>,
}

impl Aabb {
    fn from_footprint(cx: f64, cy: f64, len: f64, wid: f64, height: f64) -> Self {
        Self {
            min: Vector3::new(cx - len / 2.0, cy - wid / 2.0, 0.0),
            max: Vector3::new(cx + len / 2.0, cy + wid / 2.0, height),
        }
    }

    fn shifted(&self, d: Vector3<f64>) -> Self {
        Self {
            min: self.min + d,
            max: self.max + d,
        }
    }

    /// Slab test; returns entry distance and outward normal of the entry face.
    fn intersect(&self, o: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        let mut normal = Vector3::zeros();
        for axis in 0..3 {
            if dir[axis].abs() < 1e-15 {
                if o[axis] < self.min[axis] || o[axis] > self.max[axis] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[axis];
            let (mut t0, mut t1) = ((self.min[axis] - o[axis]) * inv, (self.max[axis] - o[axis]) * inv);
            let mut sign = -1.0;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
                sign = 1.0;
            }
            if t0 > t_near {
                t_near = t0;
                normal = Vector3::zeros();
                normal[axis] = sign;
            }
            t_far = t_far.min(t1);
            if t_near > t_far {
                return None;
            }
        }
        (t_near > 1e-9).then_some((t_near, normal))
    }
}

#[derive(Debug, Clone)]
struct SceneObject {
    id: u32,
    class: u8,
    color: [f64; 3],
    bounds: Aabb,
    velocity: Vector3<f64>,
}

impl SceneObject {
    fn is_dynamic(&self) -> bool {
        self.id >= DYNAMIC_ID_BASE
    }

    fn bounds_at(&self, time: f64) -> Aabb {
        self.bounds.shifted(self.velocity * time)
    }
}

/// A sampled scene: static layout, moving objects and an ego trajectory.
#[derive(Debug, Clone)]
pub struct ToyScene {
    config: ToySceneConfig,
    classes: ClassConfig,
    camera: CameraModel,
    objects: Vec<SceneObject>,
    poses: Vec<Pose6>,
    light: Vector3<f64>,
}

/// Buffers produced by one render.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub rgb: Array3<u8>,
    pub depth: Array2<f32>,
    pub semantic: Array2<u8>,
    /// 0 for ground and sky, static ids below [`DYNAMIC_ID_BASE`], dynamic above.
    pub object_ids: Array2<u32>,
}

fn class_id(classes: &ClassConfig, name: &str, fallback: u8) -> u8 {
    classes.id_of(name).unwrap_or(fallback)
}

impl ToyScene {
    pub fn sample(config: &ToySceneConfig, classes: &ClassConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let camera = config.rig().camera()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let duration = config.frames as f64 * config.frame_interval_s;
        let ego_travel = config.ego_speed_mps * duration;
        let building = class_id(classes, "building", 0);
        let vehicle = class_id(classes, "vehicle", 11);
        let pedestrian = class_id(classes, "pedestrian", 10);
        let pole = class_id(classes, "pole", 2);

        let mut objects = Vec::new();
        let mut next_static = 1u32;
        let facade = config.road_half_width + config.sidewalk_width + 0.5;
        for side in [-1.0, 1.0] {
            let mut x = -5.0;
            for _ in 0..config.buildings_per_side {
                let len = rng.gen_range(8.0..16.0);
                let depth = rng.gen_range(6.0..12.0);
                let height = rng.gen_range(5.0..18.0);
                let tint: f64 = rng.gen_range(0.0..1.0);
                let color = [
                    0.45 + 0.35 * tint,
                    0.4 + 0.25 * (1.0 - tint),
                    0.35 + 0.2 * rng.gen_range(0.0..1.0),
                ];
                objects.push(SceneObject {
                    id: next_static,
                    class: building,
                    color,
                    bounds: Aabb::from_footprint(x + len / 2.0, side * (facade + depth / 2.0), len, depth, height),
                    velocity: Vector3::zeros(),
                });
                next_static += 1;
                x += len + rng.gen_range(1.0..5.0);
            }
            // A pole at the curb, mostly for parallax.
            objects.push(SceneObject {
                id: next_static,
                class: pole,
                color: [0.25, 0.25, 0.28],
                bounds: Aabb::from_footprint(
                    rng.gen_range(8.0..20.0),
                    side * (config.road_half_width + 0.4),
                    0.25,
                    0.25,
                    4.0,
                ),
                velocity: Vector3::zeros(),
            });
            next_static += 1;
        }

        let mut next_dynamic = DYNAMIC_ID_BASE;
        for i in 0..config.vehicles {
            let same_direction = i % 2 == 0;
            let lane = if same_direction { -1.75 } else { 1.75 };
            let speed = if same_direction {
                rng.gen_range(0.3..0.8) * config.ego_speed_mps
            } else {
                -rng.gen_range(3.0..7.0)
            };
            let x0 = 2.0 + rng.gen_range(7.0..16.0) + if same_direction { 0.0 } else { ego_travel };
            let color = [rng.gen_range(0.5..0.95), rng.gen_range(0.05..0.4), rng.gen_range(0.05..0.6)];
            objects.push(SceneObject {
                id: next_dynamic,
                class: vehicle,
                color,
                bounds: Aabb::from_footprint(x0, lane + rng.gen_range(-0.3..0.3), 4.2, 1.8, 1.5),
                velocity: Vector3::new(speed, 0.0, 0.0),
            });
            next_dynamic += 1;
        }
        for i in 0..config.pedestrians {
            let side = if i % 2 == 0 { -1.0 } else { 1.0 };
            let y = side * (config.road_half_width + config.sidewalk_width / 2.0);
            objects.push(SceneObject {
                id: next_dynamic,
                class: pedestrian,
                color: [rng.gen_range(0.1..0.3), rng.gen_range(0.2..0.5), rng.gen_range(0.6..0.95)],
                bounds: Aabb::from_footprint(2.0 + rng.gen_range(6.0..12.0), y, 0.6, 0.6, 1.8),
                velocity: Vector3::new(rng.gen_range(-1.5..1.5), 0.0, 0.0),
            });
            next_dynamic += 1;
        }

        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let poses = ego_trajectory(config, phase);
        Ok(Self {
            config: config.clone(),
            classes: classes.clone(),
            camera,
            objects,
            poses,
            light: Vector3::new(-0.45, 0.35, 0.82).normalize(),
        })
    }

    pub fn poses(&self) -> &[Pose6] {
        &self.poses
    }

    pub fn camera(&self) -> &CameraModel {
        &self.camera
    }

    fn time(&self, frame: usize) -> f64 {
        frame as f64 * self.config.frame_interval_s
    }

    /// Renders frame `frame`, with or without dynamic objects.
    pub fn render(&self, frame: usize, with_dynamic: bool) -> RenderOutput {
        let (w, h) = (self.config.width, self.config.height);
        let to_world = world_from_camera(&self.poses[frame]);
        let time = self.time(frame);
        let active: Vec<(Aabb, &SceneObject)> = self
            .objects
            .iter()
            .filter(|o| with_dynamic || !o.is_dynamic())
            .map(|o| (o.bounds_at(time), o))
            .collect();
        let casters: Vec<Aabb> = active
            .iter()
            .filter(|(_, o)| o.is_dynamic())
            .map(|(b, _)| *b)
            .collect();

        let mut rgb = Array3::<u8>::zeros((h, w, 3));
        let mut depth = Array2::<f32>::zeros((h, w));
        let mut semantic = Array2::<u8>::zeros((h, w));
        let mut object_ids = Array2::<u32>::zeros((h, w));
        let origin = to_world.translation;
        for v in 0..h {
            for u in 0..w {
                let ray_cam = self.camera.backproject(u as f64, v as f64, 1.0);
                let dir = to_world.rotation * ray_cam;
                let hit = self.trace(&origin, &dir, &active, &casters);
                let z = hit.distance.min(MAX_DEPTH_M);
                depth[[v, u]] = (z / MAX_DEPTH_M) as f32;
                semantic[[v, u]] = hit.class;
                object_ids[[v, u]] = hit.object;
                for c in 0..3 {
                    rgb[[v, u, c]] = (hit.color[c].clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        }
        RenderOutput {
            rgb,
            depth,
            semantic,
            object_ids,
        }
    }

    fn trace(
        &self,
        origin: &Vector3<f64>,
        dir: &Vector3<f64>,
        active: &[(Aabb, &SceneObject)],
        casters: &[Aabb],
    ) -> Hit {
        // `dir` has unit optical-z component, so ray distance equals planar depth.
        let mut best = self.sky(dir);
        if dir.z < 0.0 {
            let s = -origin.z / dir.z;
            if s < best.distance {
                best = self.ground(origin + dir * s, s, casters);
            }
        }
        for (bounds, obj) in active {
            if let Some((s, n)) = bounds.intersect(origin, dir) {
                if s < best.distance {
                    let shade = 0.55 + 0.45 * n.dot(&self.light).max(0.0);
                    let p = origin + dir * s;
                    let gradient = 1.0 - 0.15 * (p.z / bounds.max.z.max(1e-6)).clamp(0.0, 1.0);
                    best = Hit {
                        distance: s,
                        color: obj.color.map(|c| c * shade * gradient),
                        class: obj.class,
                        object: obj.id,
                    };
                }
            }
        }
        best
    }

    fn sky(&self, dir: &Vector3<f64>) -> Hit {
        let elevation = (dir.z / dir.norm()).clamp(0.0, 1.0);
        let horizon = [0.78, 0.84, 0.9];
        let zenith = [0.32, 0.5, 0.82];
        let t = elevation.powf(0.6);
        Hit {
            distance: f64::INFINITY,
            color: [0, 1, 2].map(|c| horizon[c] + (zenith[c] - horizon[c]) * t),
            class: self.classes.ignore_id,
            object: 0,
        }
    }

    fn ground(&self, p: Vector3<f64>, distance: f64, casters: &[Aabb]) -> Hit {
        let cfg = &self.config;
        let ay = p.y.abs();
        let (class, mut color) = if ay < 0.12 && p.x.rem_euclid(6.0) < 3.0 {
            (class_id(&self.classes, "road line", 3), [0.86, 0.85, 0.78])
        } else if ay < cfg.road_half_width {
            let g = 0.34 + 0.025 * (0.7 * p.x).sin() * (1.1 * p.y).cos();
            (self.classes.road_id, [g, g, g + 0.015])
        } else if ay < cfg.road_half_width + cfg.sidewalk_width {
            (self.classes.sidewalk_id, [0.62, 0.58, 0.52])
        } else {
            let g = 0.03 * (0.5 * p.x + 0.3 * p.y).sin();
            (class_id(&self.classes, "vegetation", 6), [0.3 + g, 0.48 + g, 0.24])
        };
        let toward_light = self.light;
        let lifted = p + Vector3::new(0.0, 0.0, 1e-6);
        if casters.iter().any(|b| b.intersect(&lifted, &toward_light).is_some()) {
            color = color.map(|c| c * cfg.shadow_factor);
        }
        Hit {
            distance,
            color,
            class,
            object: 0,
        }
    }
}

struct Hit {
    distance: f64,
    color: [f64; 3],
    class: u8,
    object: u32,
}

/// Ego camera poses: gently weaving drive along the road axis.
fn ego_trajectory(cfg: &ToySceneConfig, phase: f64) -> Vec<Pose6> {
    let mount = Vector3::new(
        cfg.mount_translation[0],
        -cfg.mount_translation[1],
        cfg.mount_translation[2],
    );
    let substeps = 16;
    let dt = cfg.frame_interval_s / substeps as f64;
    let heading = |t: f64| cfg.yaw_amplitude_deg.to_radians() * (0.8 * t + phase).sin();
    let (mut x, mut y) = (0.0f64, 0.0f64);
    let mut poses = Vec::with_capacity(cfg.frames);
    for frame in 0..cfg.frames {
        let t = frame as f64 * cfg.frame_interval_s;
        let psi = heading(t);
        let body = Rotation3::from_axis_angle(&Vector3::z_axis(), psi).into_inner();
        let cam = RigidTransform {
            rotation: body * body_from_optical(),
            translation: Vector3::new(x, y, 0.0) + body * mount,
        };
        poses.push(pose_from_world_camera(&cam));
        for k in 0..substeps {
            let h = heading(t + (k as f64 + 0.5) * dt);
            x += cfg.ego_speed_mps * h.cos() * dt;
            y += cfg.ego_speed_mps * h.sin() * dt;
        }
    }
    poses
}

/// Renders a paired dynamic/static sequence. Deterministic in `seed`.
pub fn generate_toy_sequence(
    config: &ToySceneConfig,
    classes: &ClassConfig,
    seed: u64,
) -> Result<SequencePair> {
    let scene = ToyScene::sample(config, classes, seed)?;
    let mut dynamic_frames = Vec::with_capacity(config.frames);
    let mut static_frames = Vec::with_capacity(config.frames);
    for index in 0..config.frames {
        let pose = scene.poses[index];
        for (with_dynamic, out) in [(true, &mut dynamic_frames), (false, &mut static_frames)] {
            let r = scene.render(index, with_dynamic);
            let mask = r.object_ids.mapv(|id| (id >= DYNAMIC_ID_BASE) as u8);
            out.push(Frame {
                rgb: r.rgb,
                depth: r.depth,
                semantic: r.semantic,
                mask,
                pose,
                index,
            });
        }
    }
    Ok(SequencePair {
        id: format!("toy_{seed:06}"),
        dynamic_frames,
        static_frames,
        rig: config.rig(),
    })
}
