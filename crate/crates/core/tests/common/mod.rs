//! Brute-force oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use candle_core::{DType, Device, Tensor, Var};
use dynafill::geometry::{CameraModel, RigidTransform};
use nalgebra::{Matrix3, Rotation3, Vector3};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut impl Rng, h: usize, w: usize) -> Array3<f32> {
    Array3::from_shape_fn((h, w, 3), |_| rng.gen_range(-1.0f32..=1.0))
}

pub fn random_mask(rng: &mut impl Rng, h: usize, w: usize, p: f64) -> Array2<u8> {
    Array2::from_shape_fn((h, w), |_| rng.gen_bool(p) as u8)
}

/// Small random rigid motion: up to `deg` degrees per axis, `meters` per axis.
pub fn small_transform(rng: &mut impl Rng, deg: f64, meters: f64) -> RigidTransform {
    let a = |rng: &mut dyn rand::RngCore| rng.gen_range(-deg..=deg).to_radians();
    let r = Rotation3::from_euler_angles(a(rng), a(rng), a(rng));
    let t = Vector3::new(
        rng.gen_range(-meters..=meters),
        rng.gen_range(-meters..=meters),
        rng.gen_range(-meters..=meters),
    );
    RigidTransform::new(*r.matrix(), t).unwrap()
}

/// Target coordinates by explicit matrix arithmetic: `x = z K⁻¹[u v 1]ᵀ`,
/// `y = R x + t`, `h = K y`, pixel `= h / h_z`.
pub fn oracle_project(u: usize, v: usize, d: f32, cam: &CameraModel, t: &RigidTransform, scale: f64) -> Option<(f64, f64, f64)> {
    if !(d > 0.0) {
        return None;
    }
    let k = Matrix3::new(cam.focal, 0.0, cam.cu, 0.0, cam.focal, cam.cv, 0.0, 0.0, 1.0);
    let k_inv = k.try_inverse().unwrap();
    let z = d as f64 * scale;
    let x = k_inv * Vector3::new(u as f64, v as f64, 1.0) * z;
    let y = t.rotation * x + t.translation;
    let h = k * y;
    if h.z <= 0.0 {
        return None;
    }
    Some((h.x / h.z, h.y / h.z, h.z))
}

/// Z-buffer visibility by brute force: a target cell is visible iff some
/// source pixel rounds into it.
pub fn oracle_visibility(depth: &Array2<f32>, cam: &CameraModel, t: &RigidTransform, scale: f64) -> Array2<u8> {
    let (h, w) = depth.dim();
    let mut zbuf = Array2::from_elem((h, w), f64::INFINITY);
    for v in 0..h {
        for u in 0..w {
            if let Some((x, y, z)) = oracle_project(u, v, depth[[v, u]], cam, t, scale) {
                let (tu, tv) = ((x + 0.5).floor(), (y + 0.5).floor());
                if tu >= 0.0 && tv >= 0.0 && (tu as usize) < w && (tv as usize) < h {
                    let c = &mut zbuf[[tv as usize, tu as usize]];
                    *c = c.min(z);
                }
            }
        }
    }
    zbuf.mapv(|z| z.is_finite() as u8)
}

pub fn to_pixel(x: f32) -> f64 {
    (x as f64 + 1.0) * 127.5
}

/// Mean SSIM by explicit per-window two-pass statistics.
pub fn oracle_ssim(a: &Array3<f32>, b: &Array3<f32>) -> f64 {
    let (h, w, c) = a.dim();
    let n = 11;
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for v0 in 0..=h - n {
        for u0 in 0..=w - n {
            for ch in 0..c {
                let mut xs = Vec::with_capacity(n * n);
                let mut ys = Vec::with_capacity(n * n);
                for v in v0..v0 + n {
                    for u in u0..u0 + n {
                        xs.push(to_pixel(a[[v, u, ch]]));
                        ys.push(to_pixel(b[[v, u, ch]]));
                    }
                }
                let m = (n * n) as f64;
                let mx = xs.iter().sum::<f64>() / m;
                let my = ys.iter().sum::<f64>() / m;
                let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / m;
                let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / m;
                let cxy = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / m;
                total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

pub fn oracle_psnr(a: &Array3<f32>, b: &Array3<f32>) -> f64 {
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        sum += (to_pixel(*x) - to_pixel(*y)).powi(2);
    }
    let mse = sum / a.len() as f64;
    10.0 * (255.0f64 * 255.0 / mse).log10()
}

pub fn randn(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(data, shape, &Device::Cpu).unwrap()
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

/// Worst relative error between the autograd gradient of `f` at `x` and
/// central finite differences, as `‖g − g_fd‖∞ / max(‖g‖∞, ‖g_fd‖∞)`.
pub fn gradient_error(x: &Tensor, f: impl Fn(&Tensor) -> Tensor) -> f64 {
    let var = Var::from_tensor(x).unwrap();
    let loss = f(var.as_tensor());
    let grads = loss.backward().unwrap();
    let g: Vec<f64> = grads
        .get(var.as_tensor())
        .map(|g| g.flatten_all().unwrap().to_vec1().unwrap())
        .unwrap_or_else(|| vec![0.0; x.elem_count()]);
    let base: Vec<f64> = x.flatten_all().unwrap().to_vec1().unwrap();
    let eps = 1e-6;
    let mut fd = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let eval = |delta: f64| {
            let mut v = base.clone();
            v[i] += delta;
            scalar(&f(&Tensor::from_vec(v, x.shape(), x.device()).unwrap()))
        };
        fd.push((eval(eps) - eval(-eps)) / (2.0 * eps));
    }
    let diff = g.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = g.iter().chain(&fd).map(|a| a.abs()).fold(0.0, f64::max);
    assert!(scale > 0.0, "gradient vanished");
    diff / scale
}
