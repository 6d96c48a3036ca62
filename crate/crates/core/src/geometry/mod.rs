//! Camera intrinsics, pose algebra, forward warping and point clouds.

pub mod camera;
pub mod pointcloud;
pub mod pose;
pub mod warp;

pub use camera::{intrinsics_from_fov, CameraModel};
pub use pointcloud::{aggregate_pointcloud, ply_string, write_ply, ColoredPoint, PosedRgbd};
pub use pose::{relative_transform, world_from_camera, Pose6, RigidTransform};
pub use warp::{project_pixel, warp_coordinates, warp_forward, ProjectedPixel, WarpResult};

/// Metric range represented by normalized depth `1.0`.
pub const MAX_DEPTH_M: f64 = 1000.0;
