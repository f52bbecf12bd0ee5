//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! All tensors, layers and losses are generic over [`Real`]. Training and
//! gradient checking use `f64`; `f32` is supported for inference-style use.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar usable by the tensor engine.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Short type name used in checkpoint headers and diagnostics.
    const NAME: &'static str;

    /// `c = alpha * a * b + beta * c` for row/column strided matrices.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`. Strides are in
    /// elements. Panics if a slice is too short for the given layout.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
        c_strides: (usize, usize),
    );

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, strides: (usize, usize), what: &str) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) * strides.0 + (cols - 1) * strides.1;
    assert!(last < len, "gemm: {what} buffer too short ({len} <= {last})");
}

macro_rules! impl_real {
    ($t:ty, $name:literal, $kernel:path) => {
        impl Real for $t {
            const NAME: &'static str = $name;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                beta: Self,
                c: &mut [Self],
                c_strides: (usize, usize),
            ) {
                check_extent(a.len(), m, k, a_strides, "lhs");
                check_extent(b.len(), k, n, b_strides, "rhs");
                check_extent(c.len(), m, n, c_strides, "output");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every index touched by the kernel lies inside the
                // slices, as verified by `check_extent` above.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0 as isize,
                        c_strides.1 as isize,
                    );
                }
            }
        }
    };
}

impl_real!(f32, "f32", matrixmultiply::sgemm);
impl_real!(f64, "f64", matrixmultiply::dgemm);
