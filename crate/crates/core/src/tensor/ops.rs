//! Forward and backward kernels for the non-convolution primitives.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    L1,
    L2,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(LossKind::L1),
            "l2" => Ok(LossKind::L2),
            other => Err(Error::Config(format!("unknown loss kind {other:?}"))),
        }
    }
}

#[inline]
pub fn elu<T: Scalar>(z: T, alpha: T) -> T {
    if z > T::zero() {
        z
    } else {
        alpha * z.exp_m1()
    }
}

#[inline]
pub(crate) fn elu_grad<T: Scalar>(z: T, alpha: T) -> T {
    if z > T::zero() {
        T::one()
    } else {
        alpha * z.exp()
    }
}

/// Logistic function evaluated without overflow for either sign.
#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Softmax over the leading axis of an `[n, plane]` buffer.
pub(crate) fn channel_softmax<T: Scalar>(x: &[T], n: usize) -> Vec<T> {
    let plane = x.len() / n;
    let mut y = vec![T::zero(); x.len()];
    for p in 0..plane {
        let mut max = T::neg_infinity();
        for k in 0..n {
            max = max.max(x[k * plane + p]);
        }
        let mut sum = T::zero();
        for k in 0..n {
            let e = (x[k * plane + p] - max).exp();
            y[k * plane + p] = e;
            sum += e;
        }
        for k in 0..n {
            y[k * plane + p] /= sum;
        }
    }
    y
}

pub(crate) fn channel_softmax_grad<T: Scalar>(y: &[T], gy: &[T], n: usize) -> Vec<T> {
    let plane = y.len() / n;
    let mut gx = vec![T::zero(); y.len()];
    for p in 0..plane {
        let mut dot = T::zero();
        for k in 0..n {
            dot += y[k * plane + p] * gy[k * plane + p];
        }
        for k in 0..n {
            let i = k * plane + p;
            gx[i] = y[i] * (gy[i] - dot);
        }
    }
    gx
}

/// Divides each position's vector across the leading axis by its L2 norm
/// (plus `eps` under the root). Returns the output and the per-position norms.
pub(crate) fn channel_normalize<T: Scalar>(x: &[T], n: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let plane = x.len() / n;
    let mut norms = vec![eps; plane];
    for k in 0..n {
        for (acc, &v) in norms.iter_mut().zip(&x[k * plane..(k + 1) * plane]) {
            *acc += v * v;
        }
    }
    norms.iter_mut().for_each(|v| *v = v.sqrt());
    let mut y = x.to_vec();
    for k in 0..n {
        for (v, &r) in y[k * plane..(k + 1) * plane].iter_mut().zip(&norms) {
            *v /= r;
        }
    }
    (y, norms)
}

pub(crate) fn channel_normalize_grad<T: Scalar>(
    y: &[T],
    norms: &[T],
    gy: &[T],
    n: usize,
) -> Vec<T> {
    let plane = y.len() / n;
    let mut dot = vec![T::zero(); plane];
    for k in 0..n {
        for p in 0..plane {
            dot[p] += y[k * plane + p] * gy[k * plane + p];
        }
    }
    let mut gx = vec![T::zero(); y.len()];
    for k in 0..n {
        for p in 0..plane {
            let i = k * plane + p;
            gx[i] = (gy[i] - y[i] * dot[p]) / norms[p];
        }
    }
    gx
}

/// `out[c, p] = sum_k weights[k, p] * stack[k, c, p]` for `weights: [n, plane]`
/// and `stack: [n, c, plane]`.
pub(crate) fn blend<T: Scalar>(weights: &[T], stack: &[T], n: usize, c: usize) -> Vec<T> {
    let plane = weights.len() / n;
    let mut out = vec![T::zero(); c * plane];
    for k in 0..n {
        let wk = &weights[k * plane..(k + 1) * plane];
        for ch in 0..c {
            let s = &stack[(k * c + ch) * plane..(k * c + ch + 1) * plane];
            let o = &mut out[ch * plane..(ch + 1) * plane];
            for p in 0..plane {
                o[p] += wk[p] * s[p];
            }
        }
    }
    out
}

pub(crate) fn blend_grads<T: Scalar>(
    weights: &[T],
    stack: &[T],
    gy: &[T],
    n: usize,
    c: usize,
) -> (Vec<T>, Vec<T>) {
    let plane = weights.len() / n;
    let mut gw = vec![T::zero(); weights.len()];
    let mut gs = vec![T::zero(); stack.len()];
    for k in 0..n {
        for ch in 0..c {
            let base = (k * c + ch) * plane;
            for p in 0..plane {
                let g = gy[ch * plane + p];
                gw[k * plane + p] += g * stack[base + p];
                gs[base + p] = weights[k * plane + p] * g;
            }
        }
    }
    (gw, gs)
}

/// Column sampled by shift `k` at column `x`: content moves toward decreasing
/// x, and the vacated right border replicates the last column.
#[inline]
pub(crate) fn shifted_column(x: usize, k: usize, width: usize) -> usize {
    (x + k).min(width - 1)
}

/// `[c, h, w] -> [n, c, h, w]`, slice `k` translated by `k` pixels.
pub(crate) fn shift_stack<T: Scalar>(
    image: &[T],
    c: usize,
    h: usize,
    w: usize,
    n: usize,
) -> Vec<T> {
    let per = c * h * w;
    let mut out = vec![T::zero(); n * per];
    for k in 0..n {
        for row in 0..c * h {
            let src = &image[row * w..(row + 1) * w];
            let dst = &mut out[k * per + row * w..k * per + (row + 1) * w];
            for x in 0..w {
                dst[x] = src[shifted_column(x, k, w)];
            }
        }
    }
    out
}

pub(crate) fn shift_stack_grad<T: Scalar>(
    gy: &[T],
    c: usize,
    h: usize,
    w: usize,
    n: usize,
) -> Vec<T> {
    let per = c * h * w;
    let mut gx = vec![T::zero(); per];
    for k in 0..n {
        for row in 0..c * h {
            let g = &gy[k * per + row * w..k * per + (row + 1) * w];
            let dst = &mut gx[row * w..(row + 1) * w];
            for x in 0..w {
                dst[shifted_column(x, k, w)] += g[x];
            }
        }
    }
    gx
}

/// `out[d, y, x] = mean_c left[c, y, x] * right[c, y, x - d]`, zero where
/// `x - d < 0`.
pub(crate) fn correlate1d<T: Scalar>(
    left: &[T],
    right: &[T],
    c: usize,
    h: usize,
    w: usize,
    max_disp: usize,
) -> Vec<T> {
    let plane = h * w;
    let inv_c = T::one() / T::of(c as f64);
    let mut out = vec![T::zero(); (max_disp + 1) * plane];
    for d in 0..=max_disp {
        let o = &mut out[d * plane..(d + 1) * plane];
        for ch in 0..c {
            let l = &left[ch * plane..(ch + 1) * plane];
            let r = &right[ch * plane..(ch + 1) * plane];
            for y in 0..h {
                for x in d..w {
                    o[y * w + x] += l[y * w + x] * r[y * w + x - d];
                }
            }
        }
        o.iter_mut().for_each(|v| *v *= inv_c);
    }
    out
}

pub(crate) fn correlate1d_grads<T: Scalar>(
    left: &[T],
    right: &[T],
    gy: &[T],
    c: usize,
    h: usize,
    w: usize,
    max_disp: usize,
) -> (Vec<T>, Vec<T>) {
    let plane = h * w;
    let inv_c = T::one() / T::of(c as f64);
    let mut gl = vec![T::zero(); left.len()];
    let mut gr = vec![T::zero(); right.len()];
    for d in 0..=max_disp {
        let g = &gy[d * plane..(d + 1) * plane];
        for ch in 0..c {
            let base = ch * plane;
            for y in 0..h {
                for x in d..w {
                    let gv = g[y * w + x] * inv_c;
                    gl[base + y * w + x] += gv * right[base + y * w + x - d];
                    gr[base + y * w + x - d] += gv * left[base + y * w + x];
                }
            }
        }
    }
    (gl, gr)
}

/// Mean loss, accumulated in 64-bit.
pub(crate) fn loss<T: Scalar>(pred: &[T], target: &[T], kind: LossKind) -> T {
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let r = (p - t).as_f64();
            match kind {
                LossKind::L1 => r.abs(),
                LossKind::L2 => r * r,
            }
        })
        .sum();
    T::of(sum / pred.len() as f64)
}

pub(crate) fn loss_grad<T: Scalar>(
    pred: &[T],
    target: &[T],
    kind: LossKind,
    upstream: T,
) -> Vec<T> {
    let scale = upstream / T::of(pred.len() as f64);
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| {
            let r = p - t;
            match kind {
                LossKind::L1 => {
                    if r > T::zero() {
                        scale
                    } else if r < T::zero() {
                        -scale
                    } else {
                        T::zero()
                    }
                }
                LossKind::L2 => T::of(2.0) * r * scale,
            }
        })
        .collect()
}
