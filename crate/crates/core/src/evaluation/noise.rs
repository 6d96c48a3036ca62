//! Input corruption models driven by a single noise scale `p_n ∈ [0, 1]`.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::ClassConfig;
use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, MAX_DEPTH_M};

/// Constants of the three noise models. The scale `p_n` is passed per call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Fraction of contour pixels kept as polygon vertices.
    pub contour_fraction: f64,
    /// `σ_i = r_i / sigma_divisor`.
    pub sigma_divisor: f64,
    /// Threshold on the horizontal Sobel response of metric depth.
    pub sobel_threshold: f64,
    /// Axial depth noise std `(a + b·(z − z0)²)` meters at `p_n = 1`.
    pub depth_noise_a: f64,
    pub depth_noise_b: f64,
    pub depth_noise_z0: f64,
    /// Cap on the absolute per-pixel depth offset, meters.
    pub depth_offset_cap_m: f64,
    pub odometry_sigma_t_m: f64,
    pub odometry_sigma_r_deg: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            contour_fraction: 0.2,
            sigma_divisor: 5.0,
            sobel_threshold: 5.0,
            depth_noise_a: 0.0012,
            depth_noise_b: 0.0019,
            depth_noise_z0: 0.4,
            depth_offset_cap_m: 5.0,
            odometry_sigma_t_m: 1.0,
            odometry_sigma_r_deg: 45.0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.contour_fraction > 0.0 && self.contour_fraction <= 1.0) {
            return Err(Error::Config("noise.contour_fraction must be in (0, 1]".into()));
        }
        let positive = [
            ("sigma_divisor", self.sigma_divisor),
            ("sobel_threshold", self.sobel_threshold),
            ("depth_offset_cap_m", self.depth_offset_cap_m),
            ("odometry_sigma_t_m", self.odometry_sigma_t_m),
            ("odometry_sigma_r_deg", self.odometry_sigma_r_deg),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("noise.{name} must be positive, got {v}")));
            }
        }
        if self.depth_noise_a < 0.0 || self.depth_noise_b < 0.0 {
            return Err(Error::Config("noise depth coefficients must be nonnegative".into()));
        }
        Ok(())
    }

    fn contour_step(&self) -> usize {
        (1.0 / self.contour_fraction).round().max(1.0) as usize
    }
}

pub fn check_noise_scale(p_n: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p_n) {
        Ok(())
    } else {
        Err(Error::Config(format!("noise scale p_n must be in [0, 1], got {p_n}")))
    }
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("finite nonnegative std")
}

/// `(v, u)` neighbor offsets in clockwise order on screen, starting west.
const MOORE: [(i64, i64); 8] = [(0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1)];

/// 8-connected components of the nonzero pixels, each in raster order.
pub fn connected_components(mask: &Array2<bool>) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = mask.dim();
    let mut seen = Array2::from_elem((h, w), false);
    let mut blobs = Vec::new();
    for v0 in 0..h {
        for u0 in 0..w {
            if !mask[[v0, u0]] || seen[[v0, u0]] {
                continue;
            }
            let mut blob = Vec::new();
            let mut queue = VecDeque::from([(v0, u0)]);
            seen[[v0, u0]] = true;
            while let Some((v, u)) = queue.pop_front() {
                blob.push((v, u));
                for (dv, du) in MOORE {
                    let (nv, nu) = (v as i64 + dv, u as i64 + du);
                    if nv < 0 || nu < 0 || nv >= h as i64 || nu >= w as i64 {
                        continue;
                    }
                    let (nv, nu) = (nv as usize, nu as usize);
                    if mask[[nv, nu]] && !seen[[nv, nu]] {
                        seen[[nv, nu]] = true;
                        queue.push_back((nv, nu));
                    }
                }
            }
            blob.sort_unstable();
            blobs.push(blob);
        }
    }
    blobs
}

/// Outer border of one 8-connected blob by Moore-neighbor tracing with
/// Jacob's stopping criterion, starting at its first pixel in raster order.
/// Pixels of thin parts may appear more than once.
pub fn trace_contour(blob: &[(usize, usize)], dims: (usize, usize)) -> Vec<(usize, usize)> {
    let Some(&start) = blob.iter().min() else {
        return Vec::new();
    };
    let (h, w) = dims;
    let mut inside = Array2::from_elem((h, w), false);
    for &(v, u) in blob {
        inside[[v, u]] = true;
    }
    let is_in = |v: i64, u: i64| v >= 0 && u >= 0 && v < h as i64 && u < w as i64 && inside[[v as usize, u as usize]];
    let start = (start.0 as i64, start.1 as i64);
    // The west neighbor of the raster-first pixel is always outside.
    let back0 = (start.0, start.1 - 1);
    let (mut cur, mut back) = (start, back0);
    let mut contour = vec![(start.0 as usize, start.1 as usize)];
    let guard = 8 * blob.len() + 16;
    for _ in 0..guard {
        let rel = (back.0 - cur.0, back.1 - cur.1);
        let k0 = MOORE.iter().position(|&d| d == rel).expect("backtrack is a neighbor");
        let mut next = None;
        for i in 1..=8 {
            let k = (k0 + i) % 8;
            let cand = (cur.0 + MOORE[k].0, cur.1 + MOORE[k].1);
            if is_in(cand.0, cand.1) {
                let prev = MOORE[(k + 7) % 8];
                next = Some((cand, (cur.0 + prev.0, cur.1 + prev.1)));
                break;
            }
        }
        let Some((n, b)) = next else {
            break; // isolated pixel
        };
        if n == start && b == back0 {
            break;
        }
        // Fallback for shapes where the entry direction never repeats.
        let second = contour.get(1).map(|&(v, u)| (v as i64, u as i64));
        if cur == start && contour.len() > 1 && Some(n) == second {
            break;
        }
        cur = n;
        back = b;
        contour.push((cur.0 as usize, cur.1 as usize));
    }
    if contour.len() > 1 && contour.last() == contour.first() {
        contour.pop();
    }
    contour
}

/// Half of the largest pairwise distance between contour points.
pub fn blob_radius(contour: &[(usize, usize)]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in contour.iter().enumerate() {
        for b in &contour[i + 1..] {
            let dv = a.0 as f64 - b.0 as f64;
            let du = a.1 as f64 - b.1 as f64;
            best = best.max(dv * dv + du * du);
        }
    }
    best.sqrt() / 2.0
}

fn centroid(blob: &[(usize, usize)]) -> (f64, f64) {
    let n = blob.len() as f64;
    let (sv, su) = blob
        .iter()
        .fold((0.0, 0.0), |(a, b), &(v, u)| (a + v as f64, b + u as f64));
    (sv / n, su / n)
}

/// Rasterizes a closed polygon given in pixel-center `(v, u)` coordinates:
/// even-odd fill of pixel centers plus the polygon's edges and vertices.
pub fn rasterize_polygon(poly: &[(f64, f64)], out: &mut Array2<bool>) {
    let (h, w) = out.dim();
    let mut set = |v: f64, u: f64| {
        let (vi, ui) = (v.round(), u.round());
        if vi >= 0.0 && ui >= 0.0 && (vi as usize) < h && (ui as usize) < w {
            out[[vi as usize, ui as usize]] = true;
        }
    };
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let steps = (a.0 - b.0).abs().max((a.1 - b.1).abs()).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            set(a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t);
        }
    }
    if n < 3 {
        return;
    }
    for v in 0..h {
        let y = v as f64;
        let mut xs = Vec::new();
        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            if (a.0 <= y) != (b.0 <= y) {
                xs.push(a.1 + (y - a.0) * (b.1 - a.1) / (b.0 - a.0));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let lo = pair[0].ceil().max(0.0);
            let hi = pair[1].floor().min(w as f64 - 1.0);
            let mut u = lo;
            while u <= hi {
                out[[v, u as usize]] = true;
                u += 1.0;
            }
        }
    }
}

/// Deformed region of one blob: every `step`-th contour pixel, offset
/// radially from the centroid by `N(0, (p_n·r/sigma_divisor)²)`, filled.
fn deform_blob<R: Rng + ?Sized>(
    blob: &[(usize, usize)],
    dims: (usize, usize),
    p_n: f64,
    cfg: &NoiseConfig,
    rng: &mut R,
) -> Array2<bool> {
    let mut region = Array2::from_elem(dims, false);
    let contour = trace_contour(blob, dims);
    if contour.len() <= 1 {
        for &(v, u) in blob {
            region[[v, u]] = true;
        }
        return region;
    }
    let mut vertices: Vec<(usize, usize)> = contour.iter().copied().step_by(cfg.contour_step()).collect();
    if vertices.len() < 3 {
        vertices = contour.clone();
    }
    let sigma = p_n * blob_radius(&contour) / cfg.sigma_divisor;
    let dist = normal(sigma);
    let c = centroid(blob);
    let poly: Vec<(f64, f64)> = vertices
        .iter()
        .map(|&(v, u)| {
            let (dv, du) = (v as f64 - c.0, u as f64 - c.1);
            let len = (dv * dv + du * du).sqrt();
            let eps = if sigma > 0.0 { dist.sample(rng) } else { 0.0 };
            if len > 0.0 {
                (v as f64 + dv / len * eps, u as f64 + du / len * eps)
            } else {
                (v as f64, u as f64)
            }
        })
        .collect();
    rasterize_polygon(&poly, &mut region);
    region
}

/// Deforms every blob of a binary mask. At `p_n = 0` each blob is replaced
/// by its contour-polygon approximation.
pub fn perturb_mask<R: Rng + ?Sized>(mask: &Array2<u8>, p_n: f64, cfg: &NoiseConfig, rng: &mut R) -> Result<Array2<u8>> {
    check_noise_scale(p_n)?;
    let dims = mask.dim();
    let binary = mask.mapv(|m| m != 0);
    let mut out = Array2::<u8>::zeros(dims);
    for blob in connected_components(&binary) {
        let region = deform_blob(&blob, dims, p_n, cfg, rng);
        out.zip_mut_with(&region, |o, &r| *o |= r as u8);
    }
    Ok(out)
}

/// Horizontal Sobel response with replicated borders.
pub fn sobel_x(img: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    let at = |v: i64, u: i64| img[[v.clamp(0, h as i64 - 1) as usize, u.clamp(0, w as i64 - 1) as usize]];
    Array2::from_shape_fn((h, w), |(v, u)| {
        let (v, u) = (v as i64, u as i64);
        (at(v - 1, u + 1) + 2.0 * at(v, u + 1) + at(v + 1, u + 1))
            - (at(v - 1, u - 1) + 2.0 * at(v, u - 1) + at(v + 1, u - 1))
    })
}

fn median(mut xs: Vec<f32>) -> Option<f32> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f32::total_cmp);
    Some(xs[xs.len() / 2])
}

/// Corrupts normalized depth in four stages:
/// 1. per-class blob deformation (road and sidewalk exempt), painted far to
///    near; gained pixels take the blob's median depth and lost pixels the
///    median depth of the blob's outer ring,
/// 2. zeroing where the horizontal Sobel response of the input's metric
///    depth exceeds the threshold,
/// 3. axial Gaussian noise with std quadratic in depth, scaled by `p_n` and
///    capped, on valid non-maximal pixels,
/// 4. dropping maximum-depth pixels to 0 with probability `p_n`.
///
/// Stages 1, 3 and 4 are skipped at `p_n = 0`. The result is clipped to `[0, 1]`.
pub fn perturb_depth<R: Rng + ?Sized>(
    depth: &Array2<f32>,
    semantic: &Array2<u8>,
    classes: &ClassConfig,
    p_n: f64,
    cfg: &NoiseConfig,
    rng: &mut R,
) -> Result<Array2<f32>> {
    check_noise_scale(p_n)?;
    if depth.dim() != semantic.dim() {
        return Err(Error::Contract(format!(
            "perturb_depth: depth {:?} vs semantic {:?}",
            depth.dim(),
            semantic.dim()
        )));
    }
    let dims = depth.dim();
    let (h, w) = dims;
    let mut out = depth.clone();

    if p_n > 0.0 {
        let mut blobs = Vec::new();
        for id in 0..classes.num_classes() as u8 {
            if id == classes.road_id || id == classes.sidewalk_id {
                continue;
            }
            let class_mask = semantic.mapv(|s| s == id);
            for blob in connected_components(&class_mask) {
                let med = median(blob.iter().map(|&(v, u)| depth[[v, u]]).collect()).unwrap_or(0.0);
                blobs.push((med, blob));
            }
        }
        blobs.sort_by(|a, b| b.0.total_cmp(&a.0));
        for (med, blob) in blobs {
            let region = deform_blob(&blob, dims, p_n, cfg, rng);
            let mut inside = Array2::from_elem(dims, false);
            for &(v, u) in &blob {
                inside[[v, u]] = true;
            }
            let mut ring = Vec::new();
            for &(v, u) in &blob {
                for (dv, du) in MOORE {
                    let (nv, nu) = (v as i64 + dv, u as i64 + du);
                    if nv >= 0 && nu >= 0 && nv < h as i64 && nu < w as i64 && !inside[[nv as usize, nu as usize]] {
                        ring.push(depth[[nv as usize, nu as usize]]);
                    }
                }
            }
            let background = median(ring);
            for v in 0..h {
                for u in 0..w {
                    match (inside[[v, u]], region[[v, u]]) {
                        (true, false) => {
                            if let Some(b) = background {
                                out[[v, u]] = b;
                            }
                        }
                        (false, true) => out[[v, u]] = med,
                        _ => {}
                    }
                }
            }
        }
    }

    let metric = depth.mapv(|d| d as f64 * MAX_DEPTH_M);
    let edges = sobel_x(&metric);
    for (o, g) in out.iter_mut().zip(&edges) {
        if g.abs() > cfg.sobel_threshold {
            *o = 0.0;
        }
    }

    if p_n > 0.0 {
        let is_max = out.mapv(|d| d >= 1.0);
        for (o, &m) in out.iter_mut().zip(&is_max) {
            if m || *o <= 0.0 {
                continue;
            }
            let z = *o as f64 * MAX_DEPTH_M;
            let std = p_n * (cfg.depth_noise_a + cfg.depth_noise_b * (z - cfg.depth_noise_z0).powi(2));
            let eps = normal(std).sample(rng).clamp(-cfg.depth_offset_cap_m, cfg.depth_offset_cap_m);
            *o = ((z + eps) / MAX_DEPTH_M) as f32;
        }
        for (o, &m) in out.iter_mut().zip(&is_max) {
            if m && rng.gen_bool(p_n) {
                *o = 0.0;
            }
        }
    }
    out.mapv_inplace(|d| d.clamp(0.0, 1.0));
    Ok(out)
}

/// Adds independent Gaussian offsets to the six degrees of freedom of `t`
/// (`p_n·σ_t` meters, `p_n·σ_R` degrees) and re-orthonormalizes. Returns `t`
/// unchanged at `p_n = 0`.
pub fn perturb_odometry<R: Rng + ?Sized>(
    t: &RigidTransform,
    p_n: f64,
    cfg: &NoiseConfig,
    rng: &mut R,
) -> Result<RigidTransform> {
    check_noise_scale(p_n)?;
    if p_n == 0.0 {
        return Ok(*t);
    }
    let (mut xyz, mut rpy) = t.to_six_dof();
    let dt = normal(p_n * cfg.odometry_sigma_t_m);
    let dr = normal(p_n * cfg.odometry_sigma_r_deg);
    for x in &mut xyz {
        *x += dt.sample(rng);
    }
    for a in &mut rpy {
        *a += dr.sample(rng);
    }
    Ok(RigidTransform::from_six_dof(xyz, rpy).orthonormalized())
}
