use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Array3};

use super::camera::CameraModel;
use super::pose::{world_from_camera, Pose6};
use crate::error::{Error, Result};

/// One posed RGB-D frame to lift into the world.
#[derive(Debug, Clone, Copy)]
pub struct PosedRgbd<'a> {
    pub rgb: &'a Array3<u8>,
    pub depth: &'a Array2<f32>,
    pub pose: Pose6,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredPoint {
    /// Right-handed world frame, meters.
    pub position: [f64; 3],
    pub color: [u8; 3],
}

/// Lifts every `stride`-th pixel (in both directions) with valid depth
/// `0 < d < 1` into the world frame. Max-range pixels carry no return.
pub fn aggregate_pointcloud(
    frames: &[PosedRgbd<'_>],
    cam: &CameraModel,
    stride: usize,
    depth_scale: f64,
) -> Vec<ColoredPoint> {
    let stride = stride.max(1);
    let mut points = Vec::new();
    for frame in frames {
        let to_world = world_from_camera(&frame.pose);
        let (h, w) = frame.depth.dim();
        for v in (0..h).step_by(stride) {
            for u in (0..w).step_by(stride) {
                let d = frame.depth[[v, u]];
                if !(d > 0.0 && d < 1.0) {
                    continue;
                }
                let p = to_world.apply(&cam.backproject(u as f64, v as f64, d as f64 * depth_scale));
                points.push(ColoredPoint {
                    position: [p.x, p.y, p.z],
                    color: [frame.rgb[[v, u, 0]], frame.rgb[[v, u, 1]], frame.rgb[[v, u, 2]]],
                });
            }
        }
    }
    points
}

/// ASCII PLY with float positions and 8-bit per-vertex color.
pub fn ply_string(points: &[ColoredPoint]) -> String {
    let mut s = String::with_capacity(64 + points.len() * 40);
    s.push_str("ply\nformat ascii 1.0\ncomment dynafill point cloud\n");
    let _ = writeln!(s, "element vertex {}", points.len());
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n");
    for p in points {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {}",
            p.position[0] as f32,
            p.position[1] as f32,
            p.position[2] as f32,
            p.color[0],
            p.color[1],
            p.color[2]
        );
    }
    s
}

pub fn write_ply(path: &Path, points: &[ColoredPoint]) -> Result<()> {
    std::fs::write(path, ply_string(points)).map_err(|e| Error::io(path, e))
}
