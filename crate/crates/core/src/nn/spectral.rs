use candle_core::{DType, Tensor, Var};

use super::layers::{Conv2d, ConvSpec};
use super::params::ParamStore;
use crate::error::Result;

const MAX_ITERATIONS: usize = 2000;
const RELATIVE_TOLERANCE: f64 = 1e-12;

/// Convolution whose `O×(C·k·k)` weight matrix is divided by its largest
/// singular value, estimated by power iteration warm-started from a stored
/// left singular vector.
#[derive(Debug, Clone)]
pub struct SpectralConv2d {
    pub conv: Conv2d,
    u: Var,
}

/// Power iteration on a row-major `rows×cols` matrix. Returns `(σ, u, v)`.
pub fn power_iteration(w: &[f64], rows: usize, cols: usize, u0: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let normalize = |x: &mut Vec<f64>| {
        let n = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 0.0 {
            x.iter_mut().for_each(|a| *a /= n);
        }
        n
    };
    let mut u = u0.to_vec();
    if normalize(&mut u) == 0.0 {
        u = vec![1.0 / (rows as f64).sqrt(); rows];
    }
    let mut v = vec![0.0; cols];
    let mut sigma = 0.0;
    for _ in 0..MAX_ITERATIONS {
        v.iter_mut().for_each(|a| *a = 0.0);
        for (r, &ur) in u.iter().enumerate() {
            let row = &w[r * cols..(r + 1) * cols];
            for (vc, &wc) in v.iter_mut().zip(row) {
                *vc += ur * wc;
            }
        }
        normalize(&mut v);
        for (r, ur) in u.iter_mut().enumerate() {
            let row = &w[r * cols..(r + 1) * cols];
            *ur = row.iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let next = normalize(&mut u);
        let converged = (next - sigma).abs() <= RELATIVE_TOLERANCE * next;
        sigma = next;
        if converged {
            break;
        }
    }
    (sigma, u, v)
}

impl SpectralConv2d {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        spec: ConvSpec,
    ) -> Result<Self> {
        let conv = Conv2d::new(ps, name, in_channels, out_channels, spec, true)?;
        let u = ps.unit_buffer(&format!("{name}.u"), out_channels)?;
        Ok(Self { conv, u })
    }

    /// Weight divided by its estimated spectral norm; gradients flow through
    /// the weight in both numerator and `σ = uᵀ W v` (u, v held constant).
    /// The stored `u` is only updated when `train` is set.
    pub fn normalized_weight(&self, train: bool) -> Result<Tensor> {
        let w = self.conv.weight.as_tensor();
        let (rows, cols) = w.dims2()?;
        let wv = w.detach().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        let u0 = self.u.as_tensor().to_dtype(DType::F64)?.to_vec1::<f64>()?;
        let (_, u, v) = power_iteration(&wv, rows, cols, &u0);
        let (dtype, device) = (w.dtype(), w.device());
        let ut = Tensor::from_vec(u, (1, rows), device)?.to_dtype(dtype)?;
        let vt = Tensor::from_vec(v, (cols, 1), device)?.to_dtype(dtype)?;
        if train {
            self.u.set(&ut.reshape(rows)?)?;
        }
        let sigma = ut.matmul(w)?.matmul(&vt)?.reshape(())?;
        Ok(w.broadcast_div(&sigma)?)
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let w = self.normalized_weight(train)?;
        self.conv.forward_with_weight(x, &w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn power_iteration_matches_svd() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for (r, c) in [(4, 9), (16, 100), (8, 3)] {
            let w: Vec<f64> = (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u0: Vec<f64> = (0..r).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (sigma, _, _) = power_iteration(&w, r, c, &u0);
            let svd = DMatrix::from_row_slice(r, c, &w).singular_values();
            assert!((sigma - svd.max()).abs() < 1e-6 * svd.max(), "{sigma} vs {}", svd.max());
        }
    }
}
