//! Floating point element types accepted by the tensor engine.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar used throughout the tensor engine and networks.
///
/// Production code runs in `f32`; `f64` is used where finite-difference
/// checks need the extra headroom.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = a * b + beta * c` where `a` is `m x k`, `b` is `k x n` and `c` is a
    /// dense row-major `m x n` buffer. `a` and `b` are addressed through
    /// `(row_stride, col_stride)` pairs, so transposed views cost nothing.
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: Strided<'_, Self>,
        b: Strided<'_, Self>,
        beta: Self,
        c: &mut [Self],
    );
}

/// Read-only matrix view over a slice.
#[derive(Clone, Copy, Debug)]
pub struct Strided<'a, T> {
    pub data: &'a [T],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T> Strided<'a, T> {
    pub fn row_major(data: &'a [T], cols: usize) -> Self {
        Self {
            data,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transpose of a row-major `rows x cols` buffer.
    pub fn transposed(data: &'a [T], cols: usize) -> Self {
        Self {
            data,
            row_stride: 1,
            col_stride: cols,
        }
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows > 0 && cols > 0 {
            let last = (rows - 1) * self.row_stride + (cols - 1) * self.col_stride;
            assert!(last < self.data.len(), "strided view exceeds its buffer");
        }
    }
}

macro_rules! gemm_impl {
    ($kernel:path) => {
        fn gemm(
            m: usize,
            k: usize,
            n: usize,
            a: Strided<'_, Self>,
            b: Strided<'_, Self>,
            beta: Self,
            c: &mut [Self],
        ) {
            a.check(m, k);
            b.check(k, n);
            assert_eq!(c.len(), m * n, "gemm output buffer has the wrong size");
            if m == 0 || n == 0 {
                return;
            }
            // SAFETY: the views were bounds-checked above and `c` is an exclusive
            // dense m x n buffer.
            unsafe {
                $kernel(
                    m,
                    k,
                    n,
                    1.0,
                    a.data.as_ptr(),
                    a.row_stride as isize,
                    a.col_stride as isize,
                    b.data.as_ptr(),
                    b.row_stride as isize,
                    b.col_stride as isize,
                    beta,
                    c.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
    };
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    gemm_impl!(matrixmultiply::sgemm);
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    gemm_impl!(matrixmultiply::dgemm);
}
