//! Scalar abstraction and the channel-major activation layout.

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

/// Floating-point element type of a network. `f32` for training and
/// sampling, `f64` for gradient checks.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    /// `c = alpha * a * b + beta * c` over strided views.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`; element `(i, j)` of a
    /// view lives at `i * rs + j * cs`.
    ///
    /// # Safety
    ///
    /// Every index reachable through the three views must be in bounds of
    /// its allocation, and `c` must not overlap `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }

    /// `x = exp(x)` elementwise.
    fn exp_in_place(xs: &mut [Self]) {
        for v in xs {
            *v = v.exp();
        }
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    /// Branch-free polynomial exp, within 2 ulp of `f32::exp` on
    /// [-87, 88]; inputs outside are clamped.
    fn exp_in_place(xs: &mut [f32]) {
        const ROUND: f32 = 12_582_912.0;
        for v in xs {
            let x = v.clamp(-87.0, 88.0);
            let t = x * std::f32::consts::LOG2_E + ROUND;
            let n = t - ROUND;
            let r = x - n * 0.693_359_4 + n * 2.121_944_4e-4;
            let mut p = 1.987_569_1e-4f32;
            p = p * r + 1.398_199_9e-3;
            p = p * r + 8.333_452e-3;
            p = p * r + 4.166_579_6e-2;
            p = p * r + 1.666_666_5e-1;
            p = p * r + 5.000_000_1e-1;
            p = p * r * r + r + 1.0;
            // low mantissa bits of `t` hold n
            let e = t.to_bits().wrapping_sub(ROUND.to_bits()).wrapping_add(127) << 23;
            *v = p * f32::from_bits(e);
        }
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// A strided matrix view into a slice.
#[derive(Clone, Copy)]
pub struct View<'a, T> {
    pub data: &'a [T],
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> View<'a, T> {
    pub fn new(data: &'a [T], offset: usize, rs: usize, cs: usize) -> Self {
        View {
            data,
            offset,
            rs,
            cs,
        }
    }

    /// Row-major `rows x cols` block starting at `offset`.
    pub fn rows(data: &'a [T], offset: usize, cols: usize) -> Self {
        View::new(data, offset, cols, 1)
    }

    /// Transposed view of a row-major block with `cols` columns.
    pub fn trans(data: &'a [T], offset: usize, cols: usize) -> Self {
        View::new(data, offset, 1, cols)
    }
}

fn check_extent(len: usize, offset: usize, r: usize, c: usize, rs: usize, cs: usize, what: &str) {
    if r == 0 || c == 0 {
        return;
    }
    let last = offset + (r - 1) * rs + (c - 1) * cs;
    assert!(last < len, "gemm {what} view out of bounds: {last} >= {len}");
}

/// Safe strided GEMM: `c = alpha * a * b + beta * c`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: View<'_, T>,
    b: View<'_, T>,
    beta: T,
    c: &mut [T],
    c_offset: usize,
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    check_extent(c.len(), c_offset, m, n, rsc, csc, "c");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let v = &mut c[c_offset + i * rsc + j * csc];
                *v = if beta == T::zero() { T::zero() } else { beta * *v };
            }
        }
        return;
    }
    check_extent(a.data.len(), a.offset, m, k, a.rs, a.cs, "a");
    check_extent(b.data.len(), b.offset, k, n, b.rs, b.cs, "b");
    // SAFETY: every index touched is bounds-checked above, and `c` is a
    // unique borrow so it cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr().add(c_offset),
            rsc as isize,
            csc as isize,
        )
    }
}

/// Activations of a batch: `channels x (batch * len)`, channel-major, so a
/// channel row holds every sample back to back.
#[derive(Debug, Clone, PartialEq)]
pub struct Act<T> {
    pub c: usize,
    pub b: usize,
    pub l: usize,
    pub data: Vec<T>,
}

impl<T: Real> Act<T> {
    pub fn zeros(c: usize, b: usize, l: usize) -> Self {
        Act {
            c,
            b,
            l,
            data: vec![T::zero(); c * b * l],
        }
    }

    pub fn from_vec(c: usize, b: usize, l: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * b * l, "activation shape mismatch");
        Act { c, b, l, data }
    }

    /// Columns per channel row.
    pub fn n(&self) -> usize {
        self.b * self.l
    }

    pub fn same_shape(&self) -> Self {
        Act::zeros(self.c, self.b, self.l)
    }

    pub fn add_assign(&mut self, other: &Act<T>) {
        debug_assert_eq!((self.c, self.b, self.l), (other.c, other.b, other.l));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strided_gemm_matches_naive() {
        // a: 2x3 row-major, b: given as 4x3 row-major and used transposed (3x4)
        let a: Vec<f64> = (0..6).map(|v| v as f64 + 1.0).collect();
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5 - 2.0).collect();
        let mut c = vec![1.0; 8];
        gemm(2, 3, 4, 2.0, View::rows(&a, 0, 3), View::trans(&b, 0, 3), 1.0, &mut c, 0, 4, 1);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = 1.0 + 2.0 * (0..3).map(|p| a[i * 3 + p] * b[j * 3 + p]).sum::<f64>();
                assert!((c[i * 4 + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fast_exp_tracks_libm() {
        let mut xs: Vec<f32> = (0..20001).map(|i| -87.0 + i as f32 * 0.00875).collect();
        let want: Vec<f32> = xs.iter().map(|v| v.exp()).collect();
        f32::exp_in_place(&mut xs);
        for (g, w) in xs.iter().zip(&want) {
            assert!(((g - w) / w).abs() < 4.0 * f32::EPSILON, "{g} vs {w}");
        }
        let mut edge = [-200.0f32, 0.0, 200.0];
        f32::exp_in_place(&mut edge);
        assert!(edge[0] < 1e-37 && edge[1] == 1.0 && edge[2].is_finite());
    }

    #[test]
    #[should_panic]
    fn out_of_bounds_view_panics() {
        let a = vec![0.0f32; 4];
        let mut c = vec![0.0f32; 4];
        gemm(2, 3, 2, 1.0, View::rows(&a, 0, 3), View::rows(&a, 0, 2), 0.0, &mut c, 0, 2, 1);
    }
}
