//! Floating point element types accepted by the tensor engine.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// f32 or f64. Everything above the kernels is generic over this trait.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Debug + Display + Default + Send + Sync + 'static
{
    /// `c = a · b + beta · c` with `a: m×k`, `b: k×n`, `c: m×n`, each operand
    /// addressed through explicit (row, column) strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
        c_strides: (usize, usize),
    );

    /// Dense row-major `c = a · b + beta · c`.
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
        Self::gemm_strided(m, k, n, a, (k, 1), b, (n, 1), beta, c, (n, 1));
    }

    /// Lossy conversion from f64 constants.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

fn span(rows: usize, cols: usize, (rs, cs): (usize, usize)) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

#[allow(clippy::too_many_arguments)]
fn check_gemm_dims<T>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    sa: (usize, usize),
    b: &[T],
    sb: (usize, usize),
    c: &[T],
    sc: (usize, usize),
) {
    assert!(a.len() >= span(m, k, sa), "gemm: lhs too short");
    assert!(b.len() >= span(k, n, sb), "gemm: rhs too short");
    assert!(c.len() >= span(m, n, sc), "gemm: output too short");
}

impl Scalar for f32 {
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        sa: (usize, usize),
        b: &[f32],
        sb: (usize, usize),
        beta: f32,
        c: &mut [f32],
        sc: (usize, usize),
    ) {
        check_gemm_dims(m, k, n, a, sa, b, sb, c, sc);
        if m == 0 || n == 0 {
            return;
        }
        // SAFETY: the slices were checked to cover every address reachable
        // through the given extents and strides.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                sa.0 as isize,
                sa.1 as isize,
                b.as_ptr(),
                sb.0 as isize,
                sb.1 as isize,
                beta,
                c.as_mut_ptr(),
                sc.0 as isize,
                sc.1 as isize,
            );
        }
    }
}

impl Scalar for f64 {
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        sa: (usize, usize),
        b: &[f64],
        sb: (usize, usize),
        beta: f64,
        c: &mut [f64],
        sc: (usize, usize),
    ) {
        check_gemm_dims(m, k, n, a, sa, b, sb, c, sc);
        if m == 0 || n == 0 {
            return;
        }
        // SAFETY: the slices were checked to cover every address reachable
        // through the given extents and strides.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                sa.0 as isize,
                sa.1 as isize,
                b.as_ptr(),
                sb.0 as isize,
                sb.1 as isize,
                beta,
                c.as_mut_ptr(),
                sc.0 as isize,
                sc.1 as isize,
            );
        }
    }
}
