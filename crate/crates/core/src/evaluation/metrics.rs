//! Image and depth quality metrics and the Fréchet distance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::geometry::MAX_DEPTH_M;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const PIXEL_RANGE: f64 = 255.0;

/// Continuous map from `[-1, 1]` to the 8-bit range `[0, 255]`.
#[inline]
pub fn to_pixel_range(x: f32) -> f64 {
    (x as f64 + 1.0) * 127.5
}

fn check_pair(pred: &Array3<f32>, gt: &Array3<f32>, what: &str) -> Result<()> {
    if pred.dim() != gt.dim() {
        return Err(Error::Contract(format!("{what}: {:?} vs {:?}", pred.dim(), gt.dim())));
    }
    Ok(())
}

fn in_scope(scope: Option<&Array2<u8>>, v: usize, u: usize) -> bool {
    scope.is_none_or(|m| m[[v, u]] != 0)
}

/// Mean absolute error on the `[0, 1]` scale over scoped pixels; NaN for an
/// empty scope.
pub fn l1_error(pred: &Array3<f32>, gt: &Array3<f32>, scope: Option<&Array2<u8>>) -> Result<f64> {
    check_pair(pred, gt, "l1_error")?;
    let (h, w, c) = pred.dim();
    let (mut sum, mut n) = (0.0, 0usize);
    for v in 0..h {
        for u in 0..w {
            if !in_scope(scope, v, u) {
                continue;
            }
            for ch in 0..c {
                sum += (pred[[v, u, ch]] as f64 - gt[[v, u, ch]] as f64).abs() / 2.0;
            }
            n += c;
        }
    }
    Ok(if n == 0 { f64::NAN } else { sum / n as f64 })
}

/// `10·log10(255² / MSE)` in the 8-bit domain. `+∞` when MSE is 0; NaN for
/// an empty scope.
pub fn psnr(pred: &Array3<f32>, gt: &Array3<f32>, scope: Option<&Array2<u8>>) -> Result<f64> {
    check_pair(pred, gt, "psnr")?;
    let (h, w, c) = pred.dim();
    let (mut sum, mut n) = (0.0, 0usize);
    for v in 0..h {
        for u in 0..w {
            if !in_scope(scope, v, u) {
                continue;
            }
            for ch in 0..c {
                let d = to_pixel_range(pred[[v, u, ch]]) - to_pixel_range(gt[[v, u, ch]]);
                sum += d * d;
            }
            n += c;
        }
    }
    if n == 0 {
        return Ok(f64::NAN);
    }
    let mse = sum / n as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PIXEL_RANGE * PIXEL_RANGE / mse).log10()
    })
}

/// SSIM of two single-channel 8-bit-domain windows given their raw sums.
fn ssim_from_sums(sx: f64, sy: f64, sxx: f64, syy: f64, sxy: f64, n: f64) -> f64 {
    let c1 = (SSIM_K1 * PIXEL_RANGE).powi(2);
    let c2 = (SSIM_K2 * PIXEL_RANGE).powi(2);
    let (mx, my) = (sx / n, sy / n);
    let vx = (sxx / n - mx * mx).max(0.0);
    let vy = (syy / n - my * my).max(0.0);
    let cxy = sxy / n - mx * my;
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Mean SSIM over all `11×11` windows (stride 1, uniform weights) and all
/// channels. With `scope`, only windows whose center pixel is in scope
/// count; NaN if none do.
pub fn ssim(pred: &Array3<f32>, gt: &Array3<f32>, scope: Option<&Array2<u8>>) -> Result<f64> {
    check_pair(pred, gt, "ssim")?;
    let (h, w, c) = pred.dim();
    let n = SSIM_WINDOW;
    if h < n || w < n {
        return Err(Error::Contract(format!("ssim needs at least {n}×{n} pixels, got {h}×{w}")));
    }
    let x = pred.mapv(to_pixel_range);
    let y = gt.mapv(to_pixel_range);
    let half = n / 2;
    let (mut total, mut count) = (0.0, 0usize);
    for v0 in 0..=h - n {
        for u0 in 0..=w - n {
            if !in_scope(scope, v0 + half, u0 + half) {
                continue;
            }
            for ch in 0..c {
                let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for v in v0..v0 + n {
                    for u in u0..u0 + n {
                        let (a, b) = (x[[v, u, ch]], y[[v, u, ch]]);
                        sx += a;
                        sy += b;
                        sxx += a * a;
                        syy += b * b;
                        sxy += a * b;
                    }
                }
                total += ssim_from_sums(sx, sy, sxx, syy, sxy, (n * n) as f64);
                count += 1;
            }
        }
    }
    Ok(if count == 0 { f64::NAN } else { total / count as f64 })
}

/// Root mean squared error in meters over masked pixels; NaN if the mask is empty.
pub fn rmse_depth(pred: &Array2<f32>, gt: &Array2<f32>, mask: &Array2<u8>) -> Result<f64> {
    if pred.dim() != gt.dim() || pred.dim() != mask.dim() {
        return Err(Error::Contract("rmse_depth: shape mismatch".into()));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for ((p, g), &m) in pred.iter().zip(gt).zip(mask) {
        if m != 0 {
            let d = (*p as f64 - *g as f64) * MAX_DEPTH_M;
            sum += d * d;
            n += 1;
        }
    }
    Ok(if n == 0 { f64::NAN } else { (sum / n as f64).sqrt() })
}

fn check_psd(cov: &DMatrix<f64>, name: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if !cov.is_square() {
        return Err(Error::Domain(format!("{name} is not square")));
    }
    let asym = (cov - cov.transpose()).abs().max();
    let scale = cov.abs().max().max(1.0);
    if asym > 1e-9 * scale {
        return Err(Error::Domain(format!("{name} is not symmetric (asymmetry {asym:e})")));
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.min();
    if min < -1e-8 * scale {
        return Err(Error::Domain(format!("{name} is not positive semidefinite (eigenvalue {min:e})")));
    }
    Ok(eig)
}

/// `‖μ₁ − μ₂‖² + Tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^{1/2})`.
///
/// The matrix square-root trace is evaluated as `Tr((S Σ₂ S)^{1/2})` with
/// `S = Σ₁^{1/2}`, which is symmetric and shares the spectrum of `Σ₁Σ₂`.
/// Rounding below zero is clamped to 0.
pub fn frechet_distance(mu1: &DVector<f64>, cov1: &DMatrix<f64>, mu2: &DVector<f64>, cov2: &DMatrix<f64>) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d || cov1.shape() != (d, d) || cov2.shape() != (d, d) {
        return Err(Error::Contract(format!(
            "frechet_distance: dimensions {d}, {}, {:?}, {:?}",
            mu2.len(),
            cov1.shape(),
            cov2.shape()
        )));
    }
    let e1 = check_psd(cov1, "first covariance")?;
    check_psd(cov2, "second covariance")?;
    let sqrt_vals = e1.eigenvalues.map(|x| x.max(0.0).sqrt());
    let s = &e1.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * e1.eigenvectors.transpose();
    let m = &s * cov2 * &s;
    let m = (&m + m.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(m).eigenvalues.iter().map(|x| x.max(0.0).sqrt()).sum();
    let diff = mu1 - mu2;
    Ok((diff.dot(&diff) + cov1.trace() + cov2.trace() - 2.0 * tr_sqrt).max(0.0))
}

/// Mean and covariance of row samples. With fewer samples than dimensions
/// the covariance is shrunk toward a scaled identity (Ledoit–Wolf).
#[derive(Debug, Clone)]
pub struct GaussianFit {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Shrinkage intensity applied (0 when not needed).
    pub shrinkage: f64,
}

pub fn fit_gaussian(samples: &[Vec<f64>]) -> Result<GaussianFit> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Contract(format!("need at least 2 samples, got {n}")));
    }
    let d = samples[0].len();
    if samples.iter().any(|s| s.len() != d) {
        return Err(Error::Contract("samples have different dimensions".into()));
    }
    let x = DMatrix::from_fn(n, d, |i, j| samples[i][j]);
    let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    if n > d {
        let cov = centered.transpose() * &centered / (n - 1) as f64;
        return Ok(GaussianFit {
            mean,
            cov,
            shrinkage: 0.0,
        });
    }
    let s = centered.transpose() * &centered / n as f64;
    let mu = s.trace() / d as f64;
    let target = DMatrix::<f64>::identity(d, d) * mu;
    let delta2 = (&s - &target).norm_squared() / d as f64;
    let mut beta_bar2 = 0.0;
    for i in 0..n {
        let row = centered.row(i).transpose();
        beta_bar2 += (&row * row.transpose() - &s).norm_squared() / d as f64;
    }
    beta_bar2 /= (n * n) as f64;
    let shrinkage = if delta2 > 0.0 { beta_bar2.min(delta2) / delta2 } else { 1.0 };
    let cov = &target * shrinkage + &s * (1.0 - shrinkage);
    Ok(GaussianFit { mean, cov, shrinkage })
}
