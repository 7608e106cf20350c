//! 2-D convolution and transposed convolution kernels.
//!
//! Convolution is cross-correlation (no kernel flip). Weights of a regular
//! convolution are laid out `[out, in, kh, kw]`; weights of a transposed
//! convolution are laid out `[in, out, kh, kw]`, so the same buffer serves a
//! convolution and its adjoint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Scalar, Strided};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub transposed: bool,
}

impl ConvSpec {
    /// Square-kernel convolution.
    pub fn conv(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        Self {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
            transposed: false,
        }
        .validated()
    }

    /// Square-kernel transposed convolution (deconvolution).
    pub fn deconv(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        Self {
            transposed: true,
            ..Self::conv(in_channels, out_channels, kernel, stride, padding)?
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.in_channels == 0
            || self.out_channels == 0
            || self.kernel_h == 0
            || self.kernel_w == 0
            || self.stride == 0
        {
            return Err(Error::invalid(format!(
                "conv spec needs positive channels, kernel and stride: {:?}",
                self
            )));
        }
        Ok(self)
    }

    /// The `ConvSpec` whose forward map is the adjoint of this one. Both use the
    /// same weight buffer.
    pub fn adjoint(&self) -> Self {
        Self {
            in_channels: self.out_channels,
            out_channels: self.in_channels,
            transposed: !self.transposed,
            ..*self
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        if self.transposed {
            [
                self.in_channels,
                self.out_channels,
                self.kernel_h,
                self.kernel_w,
            ]
        } else {
            [
                self.out_channels,
                self.in_channels,
                self.kernel_h,
                self.kernel_w,
            ]
        }
    }

    /// Fan-in used by weight initialization.
    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    /// Output spatial size for an `h x w` input; fails when either side would
    /// be smaller than one pixel.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let out = |len: usize, k: usize| -> Option<usize> {
            if self.transposed {
                ((len - 1) * self.stride + k).checked_sub(2 * self.padding)
            } else {
                (len + 2 * self.padding)
                    .checked_sub(k)
                    .map(|v| v / self.stride + 1)
            }
        };
        match (out(h, self.kernel_h), out(w, self.kernel_w)) {
            (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => Ok((oh, ow)),
            _ => Err(Error::shape(format!(
                "{:?} produces an empty output for a {}x{} input",
                self, h, w
            ))),
        }
    }
}

/// Geometry shared by the three kernels, phrased in terms of the regular
/// convolution `x[ci, h, w] -> y[co, oh, ow]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub oh: usize,
    pub ow: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Geometry {
    /// Output indices `o` with `0 <= o*stride + k - pad < len`.
    #[inline]
    fn valid(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let hi = (len as isize - off + s - 1) / s;
        let hi = hi.clamp(0, out_len as isize);
        (lo.min(hi) as usize, hi as usize)
    }
}

impl Geometry {
    fn patch(&self) -> usize {
        self.ci * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds `x[ci, h, w]` into a `[ci*kh*kw, oh*ow]` patch matrix; taps that
/// fall in the padding stay zero.
fn im2col<T: Scalar>(x: &[T], g: &Geometry) -> Vec<T> {
    let p = g.out_plane();
    let mut cols = vec![T::zero(); g.patch() * p];
    for i in 0..g.ci {
        let xin = &x[i * g.h * g.w..(i + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (oy0, oy1) = g.valid(ky, g.h, g.oh);
            for kx in 0..g.kw {
                let (ox0, ox1) = g.valid(kx, g.w, g.ow);
                let r = (i * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[r * p..(r + 1) * p];
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ky - g.pad;
                    let row = &xin[iy * g.w..(iy + 1) * g.w];
                    let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    for ox in ox0..ox1 {
                        drow[ox] = row[ox * g.stride + kx - g.pad];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: sums patch entries back onto `[ci, h, w]`.
fn col2im<T: Scalar>(cols: &[T], g: &Geometry) -> Vec<T> {
    let p = g.out_plane();
    let mut x = vec![T::zero(); g.ci * g.h * g.w];
    for i in 0..g.ci {
        let xin = &mut x[i * g.h * g.w..(i + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (oy0, oy1) = g.valid(ky, g.h, g.oh);
            for kx in 0..g.kw {
                let (ox0, ox1) = g.valid(kx, g.w, g.ow);
                let r = (i * g.kh + ky) * g.kw + kx;
                let src = &cols[r * p..(r + 1) * p];
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ky - g.pad;
                    let row = &mut xin[iy * g.w..(iy + 1) * g.w];
                    let srow = &src[oy * g.ow..(oy + 1) * g.ow];
                    for ox in ox0..ox1 {
                        row[ox * g.stride + kx - g.pad] += srow[ox];
                    }
                }
            }
        }
    }
    x
}

/// `y[co, oh, ow] = sum x[ci, oy*s+ky-p, ox*s+kx-p] * w[co, ci, ky, kx]`
pub(crate) fn forward<T: Scalar>(x: &[T], w: &[T], g: &Geometry) -> Vec<T> {
    let cols = im2col(x, g);
    let mut y = vec![T::zero(); g.co * g.out_plane()];
    T::gemm(
        g.co,
        g.patch(),
        g.out_plane(),
        Strided::row_major(w, g.patch()),
        Strided::row_major(&cols, g.out_plane()),
        T::zero(),
        &mut y,
    );
    y
}

/// Adjoint of [`forward`] with respect to `x`: scatters `gy[co, oh, ow]` back
/// onto a `[ci, h, w]` buffer.
pub(crate) fn backward_input<T: Scalar>(gy: &[T], w: &[T], g: &Geometry) -> Vec<T> {
    let mut cols = vec![T::zero(); g.patch() * g.out_plane()];
    T::gemm(
        g.patch(),
        g.co,
        g.out_plane(),
        Strided::transposed(w, g.patch()),
        Strided::row_major(gy, g.out_plane()),
        T::zero(),
        &mut cols,
    );
    col2im(&cols, g)
}

/// Gradient of [`forward`] with respect to the `[co, ci, kh, kw]` weights.
pub(crate) fn backward_weight<T: Scalar>(x: &[T], gy: &[T], g: &Geometry) -> Vec<T> {
    let cols = im2col(x, g);
    let mut gw = vec![T::zero(); g.co * g.patch()];
    T::gemm(
        g.co,
        g.out_plane(),
        g.patch(),
        Strided::row_major(gy, g.out_plane()),
        Strided::transposed(&cols, g.out_plane()),
        T::zero(),
        &mut gw,
    );
    gw
}

pub(crate) fn add_bias<T: Scalar>(y: &mut [T], bias: &[T]) {
    let plane = y.len() / bias.len();
    for (chunk, &b) in y.chunks_mut(plane).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

pub(crate) fn bias_grad<T: Scalar>(gy: &[T], channels: usize) -> Vec<T> {
    let plane = gy.len() / channels;
    gy.chunks(plane)
        .map(|c| T::of(c.iter().map(|v| v.as_f64()).sum::<f64>()))
        .collect()
}
