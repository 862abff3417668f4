//! Floating-point abstraction shared by the signal chain and the network.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar type the numerical core is generic over: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + rustfft::FftNum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`.
    fn of(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;

    /// `c = a * b + beta * c` for an (m x k) `a`, (k x n) `b` and row-major
    /// (m x n) `c`; `a` and `b` are addressed by (row, column) strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_strides: [usize; 2], b: &[Self], b_strides: [usize; 2], beta: Self, c: &mut [Self]);
}

fn check_gemm(m: usize, k: usize, n: usize, a: usize, sa: [usize; 2], b: usize, sb: [usize; 2], c: usize) {
    let last = |r: usize, cols: usize, s: [usize; 2]| (r.max(1) - 1) * s[0] + (cols.max(1) - 1) * s[1];
    assert!(m == 0 || k == 0 || last(m, k, sa) < a, "gemm: a too short");
    assert!(k == 0 || n == 0 || last(k, n, sb) < b, "gemm: b too short");
    assert!(m * n <= c, "gemm: c too short");
}

impl Scalar for f32 {
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], sa: [usize; 2], b: &[Self], sb: [usize; 2], beta: Self, c: &mut [Self]) {
        check_gemm(m, k, n, a.len(), sa, b.len(), sb, c.len());
        // SAFETY: every addressed element was bounds-checked above.
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, 1.0,
                a.as_ptr(), sa[0] as isize, sa[1] as isize,
                b.as_ptr(), sb[0] as isize, sb[1] as isize,
                beta, c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], sa: [usize; 2], b: &[Self], sb: [usize; 2], beta: Self, c: &mut [Self]) {
        check_gemm(m, k, n, a.len(), sa, b.len(), sb, c.len());
        // SAFETY: every addressed element was bounds-checked above.
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, 1.0,
                a.as_ptr(), sa[0] as isize, sa[1] as isize,
                b.as_ptr(), sb[0] as isize, sb[1] as isize,
                beta, c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}
