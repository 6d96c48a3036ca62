//! Convolution primitives built on explicit im2col/col2im custom ops plus a
//! matmul. Both ops are each other's adjoint, which gives the backward pass.

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor};

/// Sliding-window geometry of a 2-D convolution over one `C×H×W` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        dilation: usize,
    ) -> candle_core::Result<Self> {
        let span = dilation * (kernel - 1) + 1;
        if height + 2 * pad < span || width + 2 * pad < span || stride == 0 {
            candle_core::bail!(
                "conv window {kernel}x{kernel} (dilation {dilation}) does not fit {height}x{width} with pad {pad}"
            );
        }
        Ok(Self {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            dilation,
            out_height: (height + 2 * pad - span) / stride + 1,
            out_width: (width + 2 * pad - span) / stride + 1,
        })
    }

    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_height * self.out_width
    }

    /// Calls `f(image_offset, column_offset)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let (h, w) = (self.height as isize, self.width as isize);
        let l = self.cols();
        for ci in 0..self.channels {
            for ky in 0..self.kernel {
                for kx in 0..self.kernel {
                    let row = (ci * self.kernel + ky) * self.kernel + kx;
                    for oy in 0..self.out_height {
                        let iy = (oy * self.stride + ky * self.dilation) as isize - self.pad as isize;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let img_row = (ci as isize * h + iy) * w;
                        let col_row = row * l + oy * self.out_width;
                        for ox in 0..self.out_width {
                            let ix = (ox * self.stride + kx * self.dilation) as isize - self.pad as isize;
                            if ix >= 0 && ix < w {
                                f((img_row + ix) as usize, col_row + ox);
                            }
                        }
                    }
                }
            }
        }
    }
}

// Column buffers are laid out `(C·k·k) × (B·Ho·Wo)` so a convolution over a
// whole batch is a single 2-D matmul.
fn im2col<T: Copy + Default>(x: &[T], batch: usize, g: &ConvGeometry) -> Vec<T> {
    let img = g.channels * g.height * g.width;
    let l = g.cols();
    let mut out = vec![T::default(); batch * g.rows() * l];
    for b in 0..batch {
        let xs = &x[b * img..(b + 1) * img];
        g.for_each_tap(|i, c| {
            let (row, col) = (c / l, c % l);
            out[(row * batch + b) * l + col] = xs[i];
        });
    }
    out
}

fn col2im<T: Copy + Default + std::ops::AddAssign>(cols: &[T], batch: usize, g: &ConvGeometry) -> Vec<T> {
    let img = g.channels * g.height * g.width;
    let l = g.cols();
    let mut out = vec![T::default(); batch * img];
    for b in 0..batch {
        let os = &mut out[b * img..(b + 1) * img];
        g.for_each_tap(|i, c| {
            let (row, col) = (c / l, c % l);
            os[i] += cols[(row * batch + b) * l + col];
        });
    }
    out
}

/// `B×C×H×W → (C·k·k)×(B·Ho·Wo)`.
struct Im2Col(ConvGeometry);

/// `(C·k·k)×(B·Ho·Wo) → B×C×H×W` for batch size `.1`, summing overlapping taps.
struct Col2Im(ConvGeometry, usize);

fn contiguous_slice<'a, T>(v: &'a [T], layout: &Layout, op: &str) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&v[start..end]),
        None => candle_core::bail!("{op} requires a contiguous input"),
    }
}

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = &self.0;
        let dims = layout.dims();
        if dims.len() != 4 || dims[1..] != [g.channels, g.height, g.width] {
            candle_core::bail!("im2col: input {dims:?} does not match geometry {g:?}");
        }
        let b = dims[0];
        let shape = Shape::from((g.rows(), b * g.cols()));
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(im2col(contiguous_slice(v, layout, "im2col")?, b, g)),
            CpuStorage::F64(v) => CpuStorage::F64(im2col(contiguous_slice(v, layout, "im2col")?, b, g)),
            other => candle_core::bail!("im2col: unsupported dtype {:?}", other.dtype()),
        };
        Ok((out, shape))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1_no_bwd(&Col2Im(self.0, arg.dim(0)?))?))
    }
}

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = &self.0;
        let dims = layout.dims();
        let b = self.1;
        if dims != [g.rows(), b * g.cols()] {
            candle_core::bail!("col2im: input {dims:?} does not match geometry {g:?} at batch {b}");
        }
        let shape = Shape::from((b, g.channels, g.height, g.width));
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(col2im(contiguous_slice(v, layout, "col2im")?, b, g)),
            CpuStorage::F64(v) => CpuStorage::F64(col2im(contiguous_slice(v, layout, "col2im")?, b, g)),
            other => candle_core::bail!("col2im: unsupported dtype {:?}", other.dtype()),
        };
        Ok((out, shape))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1_no_bwd(&Im2Col(self.0))?))
    }
}

/// `O×(B·H·W) → B×O×H×W`.
fn batch_first(y: &Tensor, b: usize, o: usize, h: usize, w: usize) -> candle_core::Result<Tensor> {
    if b == 1 {
        return y.reshape((1, o, h, w));
    }
    y.reshape((o, b, h, w))?.transpose(0, 1)?.contiguous()
}

/// 2-D convolution. `weight` is `O×(C·k·k)`, `bias` is `O`.
pub fn conv2d(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    kernel: usize,
    stride: usize,
    pad: usize,
    dilation: usize,
) -> candle_core::Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let out_c = weight.dim(0)?;
    let y = if kernel == 1 && stride == 1 && pad == 0 {
        let flat = x.transpose(0, 1)?.contiguous()?.reshape((c, b * h * w))?;
        batch_first(&weight.matmul(&flat)?, b, out_c, h, w)?
    } else {
        let g = ConvGeometry::new(c, h, w, kernel, stride, pad, dilation)?;
        let cols = x.contiguous()?.apply_op1(Im2Col(g))?;
        batch_first(&weight.matmul(&cols)?, b, out_c, g.out_height, g.out_width)?
    };
    match bias {
        Some(bias) => y.broadcast_add(&bias.reshape((1, out_c, 1, 1))?),
        None => Ok(y),
    }
}

/// Output size of a transposed convolution along one axis.
pub fn conv_transpose_out(input: usize, kernel: usize, stride: usize, pad: usize, output_pad: usize) -> usize {
    (input - 1) * stride + kernel + output_pad - 2 * pad
}

/// Transposed 2-D convolution (the adjoint of [`conv2d`] with the same
/// kernel, stride and padding). `weight` is `C_in×(C_out·k·k)`.
pub fn conv_transpose2d(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    kernel: usize,
    stride: usize,
    pad: usize,
    output_pad: usize,
) -> candle_core::Result<Tensor> {
    let (b, c_in, h, w) = x.dims4()?;
    let out_c = weight.dim(1)? / (kernel * kernel);
    let (ho, wo) = (
        conv_transpose_out(h, kernel, stride, pad, output_pad),
        conv_transpose_out(w, kernel, stride, pad, output_pad),
    );
    let g = ConvGeometry::new(out_c, ho, wo, kernel, stride, pad, 1)?;
    if (g.out_height, g.out_width) != (h, w) {
        candle_core::bail!("transposed conv geometry mismatch: {g:?} vs input {h}x{w}");
    }
    let flat = x.transpose(0, 1)?.contiguous()?.reshape((c_in, b * h * w))?;
    let cols = weight.t()?.matmul(&flat)?;
    let y = cols.contiguous()?.apply_op1(Col2Im(g, b))?;
    match bias {
        Some(bias) => y.broadcast_add(&bias.reshape((1, out_c, 1, 1))?),
        None => Ok(y),
    }
}

/// Linear interpolation matrix (`2n×n`) for ×2 upsampling with half-pixel
/// centers and edge clamping.
fn upsample_matrix(n: usize, dtype: candle_core::DType, device: &candle_core::Device) -> candle_core::Result<Tensor> {
    let m = 2 * n;
    let mut data = vec![0f64; m * n];
    for i in 0..m {
        let src = ((i as f64 + 0.5) / 2.0 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        let frac = src - i0 as f64;
        data[i * n + i0] += 1.0 - frac;
        data[i * n + i1] += frac;
    }
    Tensor::from_vec(data, (m, n), device)?.to_dtype(dtype)
}

/// Bilinear ×2 upsampling of a `B×C×H×W` tensor.
pub fn upsample_bilinear2x(x: &Tensor) -> candle_core::Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let uh_t = upsample_matrix(h, x.dtype(), x.device())?.t()?.contiguous()?;
    let uw_t = upsample_matrix(w, x.dtype(), x.device())?.t()?.contiguous()?;
    let rows = x.contiguous()?.reshape((b * c * h, w))?.matmul(&uw_t)?;
    let cols = rows
        .reshape((b * c, h, 2 * w))?
        .transpose(1, 2)?
        .contiguous()?
        .reshape((b * c * 2 * w, h))?
        .matmul(&uh_t)?;
    cols.reshape((b * c, 2 * w, 2 * h))?
        .transpose(1, 2)?
        .contiguous()?
        .reshape((b, c, 2 * h, 2 * w))
}

/// Group normalization without affine parameters.
pub fn group_norm(x: &Tensor, groups: usize, eps: f64) -> candle_core::Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let xs = x.reshape((b, groups, (c / groups) * h * w))?;
    let mean = xs.mean_keepdim(2)?;
    let centered = xs.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(2)?;
    centered
        .broadcast_div(&(var + eps)?.sqrt()?)?
        .reshape((b, c, h, w))
}
