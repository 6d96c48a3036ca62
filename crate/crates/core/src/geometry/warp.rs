//! Depth-based forward warping with z-buffered point splatting.

use nalgebra::Vector3;
use ndarray::{Array2, Array3, ArrayView2, ArrayView3};

use super::camera::CameraModel;
use super::pose::RigidTransform;
use crate::error::{ensure, Result};

/// Value written to image and depth wherever `visibility == 0`.
pub const INVALID_VALUE: f32 = 0.0;

#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    /// `H×W×C`, same channel count as the source image.
    pub image: Array3<f32>,
    /// Normalized depth of the warped points in the target view.
    pub depth: Array2<f32>,
    pub visibility: Array2<u8>,
}

/// Continuous target coordinates of one source pixel before rasterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPixel {
    pub u: f64,
    pub v: f64,
    /// Planar depth in the target camera, meters.
    pub z: f64,
}

/// Projects source pixel `(u, v)` with normalized depth `d` into the target
/// view. `None` for invalid depth or points at/behind the target camera.
#[inline]
pub fn project_pixel(
    u: usize,
    v: usize,
    d: f32,
    cam: &CameraModel,
    transform: &RigidTransform,
    depth_scale: f64,
) -> Option<ProjectedPixel> {
    if !(d > 0.0) || !d.is_finite() {
        return None;
    }
    let z = d as f64 * depth_scale;
    let p = cam.backproject(u as f64, v as f64, z);
    let q = transform.apply(&p);
    let h: Vector3<f64> = cam.project_homogeneous(&q);
    if !(h.z > 0.0) {
        return None;
    }
    Some(ProjectedPixel {
        u: h.x / h.z,
        v: h.y / h.z,
        z: h.z,
    })
}

/// Pre-rasterization coordinates for every source pixel, row-major.
pub fn warp_coordinates(
    depth: ArrayView2<f32>,
    cam: &CameraModel,
    transform: &RigidTransform,
    depth_scale: f64,
) -> Vec<Option<ProjectedPixel>> {
    let (h, w) = depth.dim();
    let mut out = Vec::with_capacity(h * w);
    for v in 0..h {
        for u in 0..w {
            out.push(project_pixel(u, v, depth[[v, u]], cam, transform, depth_scale));
        }
    }
    out
}

/// Nearest target cell for a continuous coordinate (round half up).
#[inline]
pub fn rasterize(c: f64) -> i64 {
    (c + 0.5).floor() as i64
}

/// Forward-warps `image` (H×W×C) from the source view into the target view
/// given by `transform` (source camera → target camera).
///
/// Each valid source pixel is splatted to one target pixel; collisions keep
/// the nearest point, ties keep the earliest source pixel in raster order.
pub fn warp_forward(
    image: ArrayView3<f32>,
    depth: ArrayView2<f32>,
    cam: &CameraModel,
    transform: &RigidTransform,
    depth_scale: f64,
) -> Result<WarpResult> {
    let (h, w, c) = image.dim();
    ensure(depth.dim() == (h, w), || {
        format!("depth {:?} does not match image {:?}", depth.dim(), (h, w))
    })?;
    ensure(cam.width == w && cam.height == h, || {
        format!("camera {}x{} does not match image {w}x{h}", cam.width, cam.height)
    })?;

    let mut zbuf = Array2::<f64>::from_elem((h, w), f64::INFINITY);
    let mut source = Array2::<usize>::from_elem((h, w), usize::MAX);
    let mut out_depth = Array2::<f32>::from_elem((h, w), INVALID_VALUE);
    for v in 0..h {
        for u in 0..w {
            let d = depth[[v, u]];
            let Some(p) = project_pixel(u, v, d, cam, transform, depth_scale) else {
                continue;
            };
            let (tu, tv) = (rasterize(p.u), rasterize(p.v));
            if tu < 0 || tv < 0 || tu >= w as i64 || tv >= h as i64 {
                continue;
            }
            let (tu, tv) = (tu as usize, tv as usize);
            if p.z < zbuf[[tv, tu]] {
                zbuf[[tv, tu]] = p.z;
                source[[tv, tu]] = v * w + u;
                let z_src = d as f64 * depth_scale;
                out_depth[[tv, tu]] = (d as f64 * (p.z / z_src)) as f32;
            }
        }
    }

    let mut out_image = Array3::<f32>::from_elem((h, w, c), INVALID_VALUE);
    let mut visibility = Array2::<u8>::zeros((h, w));
    for v in 0..h {
        for u in 0..w {
            let s = source[[v, u]];
            if s == usize::MAX {
                continue;
            }
            visibility[[v, u]] = 1;
            let (sv, su) = (s / w, s % w);
            for ch in 0..c {
                out_image[[v, u, ch]] = image[[sv, su, ch]];
            }
        }
    }
    Ok(WarpResult {
        image: out_image,
        depth: out_depth,
        visibility,
    })
}
