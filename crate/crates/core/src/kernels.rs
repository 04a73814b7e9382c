//! Forward and backward kernels over raw NCHW buffers.
//!
//! These are graph-free; [`Graph`](crate::graph::Graph) records which kernel
//! produced each node and calls the matching backward kernel.

#![allow(clippy::needless_range_loop)]

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dGeometry {
    pub fn infer<T: Real>(
        input: &Tensor<T>,
        kernel: &Tensor<T>,
        bias: &Tensor<T>,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let (batch, cin, in_h, in_w) = input.dims4().map_err(|_| {
            Error::shape(
                "conv2d",
                format!("input must be (N,Cin,H,W), got {:?}", input.shape()),
            )
        })?;
        let (cout, kcin, kh, kw) = kernel.dims4().map_err(|_| {
            Error::shape(
                "conv2d",
                format!("kernel must be (Cout,Cin,kh,kw), got {:?}", kernel.shape()),
            )
        })?;
        if kcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("kernel Cin={kcin} but input Cin={cin}"),
            ));
        }
        if bias.shape() != [cout] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?} but kernel Cout={cout}", bias.shape()),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidConfig("conv2d: stride must be positive".into()));
        }
        if kh > in_h + 2 * padding || kw > in_w + 2 * padding {
            return Err(Error::EmptyOutput {
                op: "conv2d",
                detail: format!(
                    "kernel {kh}x{kw} exceeds padded input {}x{}",
                    in_h + 2 * padding,
                    in_w + 2 * padding
                ),
            });
        }
        let out_h = (in_h + 2 * padding - kh) / stride + 1;
        let out_w = (in_w + 2 * padding - kw) / stride + 1;
        if out_h == 0 || out_w == 0 || batch == 0 {
            return Err(Error::EmptyOutput {
                op: "conv2d",
                detail: format!("output would be {batch}x{cout}x{out_h}x{out_w}"),
            });
        }
        Ok(Self {
            batch,
            in_channels: cin,
            out_channels: cout,
            in_h,
            in_w,
            kernel_h: kh,
            kernel_w: kw,
            out_h,
            out_w,
            stride,
            padding,
        })
    }

    /// Output positions `o` along one axis whose tap `o*stride + k - padding`
    /// lands inside `[0, len)`.
    #[inline]
    fn valid_range(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.padding as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        // largest o with o*s + off <= len - 1
        let hi_num = len as isize - 1 - off;
        if hi_num < 0 {
            return (0, 0);
        }
        let hi = (hi_num / s + 1).min(out_len as isize);
        if lo >= hi {
            (0, 0)
        } else {
            (lo as usize, hi as usize)
        }
    }
}

pub fn conv2d_forward<T: Real>(
    input: &[T],
    kernel: &[T],
    bias: &[T],
    g: &Conv2dGeometry,
) -> Vec<T> {
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let ksz = g.kernel_h * g.kernel_w;
    let mut out = vec![T::zero(); g.batch * g.out_channels * out_plane];
    for n in 0..g.batch {
        for co in 0..g.out_channels {
            let o_base = (n * g.out_channels + co) * out_plane;
            let out_map = &mut out[o_base..o_base + out_plane];
            out_map.fill(bias[co]);
            for ci in 0..g.in_channels {
                let i_base = (n * g.in_channels + ci) * in_plane;
                let in_map = &input[i_base..i_base + in_plane];
                let k_base = (co * g.in_channels + ci) * ksz;
                for ky in 0..g.kernel_h {
                    let (oy0, oy1) = g.valid_range(ky, g.in_h, g.out_h);
                    for kx in 0..g.kernel_w {
                        let wv = kernel[k_base + ky * g.kernel_w + kx];
                        let (ox0, ox1) = g.valid_range(kx, g.in_w, g.out_w);
                        if ox0 == ox1 {
                            continue;
                        }
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky - g.padding;
                            let out_row = &mut out_map[oy * g.out_w..(oy + 1) * g.out_w];
                            let in_row = &in_map[iy * g.in_w..(iy + 1) * g.in_w];
                            if g.stride == 1 {
                                let ix0 = ox0 + kx - g.padding;
                                let dst = &mut out_row[ox0..ox1];
                                let src = &in_row[ix0..ix0 + (ox1 - ox0)];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += wv * *s;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    out_row[ox] += wv * in_row[ox * g.stride + kx - g.padding];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of a convolution with respect to its three operands.
pub struct Conv2dGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Real>(
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    g: &Conv2dGeometry,
    want_input: bool,
) -> Conv2dGrads<T> {
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let ksz = g.kernel_h * g.kernel_w;
    let mut gin = want_input.then(|| vec![T::zero(); input.len()]);
    let mut gk = vec![T::zero(); kernel.len()];
    let mut gb = vec![T::zero(); g.out_channels];
    for n in 0..g.batch {
        for co in 0..g.out_channels {
            let o_base = (n * g.out_channels + co) * out_plane;
            let gout_map = &grad_out[o_base..o_base + out_plane];
            gb[co] += gout_map.iter().copied().sum::<T>();
            for ci in 0..g.in_channels {
                let i_base = (n * g.in_channels + ci) * in_plane;
                let in_map = &input[i_base..i_base + in_plane];
                let k_base = (co * g.in_channels + ci) * ksz;
                for ky in 0..g.kernel_h {
                    let (oy0, oy1) = g.valid_range(ky, g.in_h, g.out_h);
                    for kx in 0..g.kernel_w {
                        let (ox0, ox1) = g.valid_range(kx, g.in_w, g.out_w);
                        if ox0 == ox1 {
                            continue;
                        }
                        let kidx = k_base + ky * g.kernel_w + kx;
                        let wv = kernel[kidx];
                        let mut acc = T::zero();
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky - g.padding;
                            let gout_row = &gout_map[oy * g.out_w..(oy + 1) * g.out_w];
                            let in_row = &in_map[iy * g.in_w..(iy + 1) * g.in_w];
                            if g.stride == 1 {
                                let ix0 = ox0 + kx - g.padding;
                                let go = &gout_row[ox0..ox1];
                                let src = &in_row[ix0..ix0 + (ox1 - ox0)];
                                for (a, b) in go.iter().zip(src) {
                                    acc += *a * *b;
                                }
                                if let Some(gin) = gin.as_mut() {
                                    let row = i_base + iy * g.in_w + ix0;
                                    let dst = &mut gin[row..row + (ox1 - ox0)];
                                    for (d, a) in dst.iter_mut().zip(go) {
                                        *d += wv * *a;
                                    }
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    let ix = ox * g.stride + kx - g.padding;
                                    acc += gout_row[ox] * in_row[ix];
                                    if let Some(gin) = gin.as_mut() {
                                        gin[i_base + iy * g.in_w + ix] += wv * gout_row[ox];
                                    }
                                }
                            }
                        }
                        gk[kidx] += acc;
                    }
                }
            }
        }
    }
    Conv2dGrads {
        input: gin,
        kernel: gk,
        bias: gb,
    }
}

/// Non-overlapping `size`×`size` max pooling. Returns the pooled values and,
/// for every output cell, the flat input index of the winning element (first
/// maximum in row-major window order).
pub fn maxpool2d_forward<T: Real>(
    input: &[T],
    dims: (usize, usize, usize, usize),
    size: usize,
) -> (Vec<T>, Vec<usize>) {
    let (n, c, h, w) = dims;
    let (oh, ow) = (h / size, w / size);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut idx = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_i = base + (oy * size) * w + ox * size;
                let mut best = input[best_i];
                for dy in 0..size {
                    for dx in 0..size {
                        let i = base + (oy * size + dy) * w + ox * size + dx;
                        if input[i] > best {
                            best = input[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                idx.push(best_i);
            }
        }
    }
    (out, idx)
}

pub fn maxpool2d_backward<T: Real>(grad_out: &[T], argmax: &[usize], input_len: usize) -> Vec<T> {
    let mut gin = vec![T::zero(); input_len];
    for (g, &i) in grad_out.iter().zip(argmax) {
        gin[i] += *g;
    }
    gin
}

/// One-axis linear interpolation taps under the half-pixel (align-corners
/// false) convention: source coordinate `(i + 0.5) * in/out - 0.5`, clamped
/// to the valid range. Returns `(lo, hi, weight_lo, weight_hi)`.
#[inline]
pub fn linear_taps(i: usize, in_len: usize, out_len: usize) -> (usize, usize, f64, f64) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
    let lo = (src.floor() as usize).min(in_len - 1);
    let hi = (lo + 1).min(in_len - 1);
    let frac = if lo == hi { 0.0 } else { src - lo as f64 };
    (lo, hi, 1.0 - frac, frac)
}

/// Bilinear resampling of every `h`×`w` plane in `input` to `oh`×`ow`.
pub fn bilinear_forward<T: Real>(
    input: &[T],
    planes: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let ytaps: Vec<_> = (0..oh).map(|y| linear_taps(y, h, oh)).collect();
    let xtaps: Vec<_> = (0..ow).map(|x| linear_taps(x, w, ow)).collect();
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let src = &input[p * h * w..(p + 1) * h * w];
        for &(y0, y1, wy0, wy1) in &ytaps {
            let (wy0, wy1) = (T::of(wy0), T::of(wy1));
            for &(x0, x1, wx0, wx1) in &xtaps {
                let (wx0, wx1) = (T::of(wx0), T::of(wx1));
                let top = src[y0 * w + x0] * wx0 + src[y0 * w + x1] * wx1;
                let bottom = src[y1 * w + x0] * wx0 + src[y1 * w + x1] * wx1;
                out.push(top * wy0 + bottom * wy1);
            }
        }
    }
    out
}

pub fn bilinear_backward<T: Real>(
    grad_out: &[T],
    planes: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let ytaps: Vec<_> = (0..oh).map(|y| linear_taps(y, h, oh)).collect();
    let xtaps: Vec<_> = (0..ow).map(|x| linear_taps(x, w, ow)).collect();
    let mut gin = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let dst = &mut gin[p * h * w..(p + 1) * h * w];
        let go = &grad_out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(y0, y1, wy0, wy1)) in ytaps.iter().enumerate() {
            let (wy0, wy1) = (T::of(wy0), T::of(wy1));
            for (ox, &(x0, x1, wx0, wx1)) in xtaps.iter().enumerate() {
                let (wx0, wx1) = (T::of(wx0), T::of(wx1));
                let g = go[oy * ow + ox];
                dst[y0 * w + x0] += g * wy0 * wx0;
                dst[y0 * w + x1] += g * wy0 * wx1;
                dst[y1 * w + x0] += g * wy1 * wx0;
                dst[y1 * w + x1] += g * wy1 * wx1;
            }
        }
    }
    gin
}

pub fn nearest2x_forward<T: Real>(input: &[T], planes: usize, (h, w): (usize, usize)) -> Vec<T> {
    let ow = 2 * w;
    let mut out = vec![T::zero(); planes * 4 * h * w];
    for p in 0..planes {
        let src = &input[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
        for y in 0..2 * h {
            for x in 0..ow {
                dst[y * ow + x] = src[(y / 2) * w + x / 2];
            }
        }
    }
    out
}

pub fn nearest2x_backward<T: Real>(grad_out: &[T], planes: usize, (h, w): (usize, usize)) -> Vec<T> {
    let ow = 2 * w;
    let mut gin = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let go = &grad_out[p * 4 * h * w..(p + 1) * 4 * h * w];
        let dst = &mut gin[p * h * w..(p + 1) * h * w];
        for y in 0..2 * h {
            for x in 0..ow {
                dst[(y / 2) * w + x / 2] += go[y * ow + x];
            }
        }
    }
    gin
}
