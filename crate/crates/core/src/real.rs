//! Floating-point abstraction and the dense kernels the network is built on.
//!
//! Everything numeric in the model is generic over [`Real`], implemented for
//! `f32` (training, inference) and `f64` (gradient checks, invariance tests).
//! Matrices are row-major slices; the matrix products go through
//! `matrixmultiply`, which handles arbitrary strides.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssign};

pub trait Real:
    Float + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Short type tag used in diagnostics.
    const NAME: &'static str;

    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;


    /// Raw strided GEMM: `C = alpha * A * B + beta * C`.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-aliasing (A/B vs C)
    /// matrices of the given shapes.
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
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    #[inline(always)]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }

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
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    #[inline(always)]
    fn of(x: f64) -> Self {
        x
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }

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
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// A strided, read-only matrix view over a slice.
#[derive(Clone, Copy)]
pub struct MatRef<'a, F> {
    pub data: &'a [F],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, F> MatRef<'a, F> {
    /// Dense row-major `rows × cols` view.
    pub fn new(data: &'a [F], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: cols, cs: 1 }
    }

    /// Row-major view with an explicit row stride (column blocks of wider matrices).
    pub fn strided(data: &'a [F], rows: usize, cols: usize, rs: usize) -> Self {
        Self { data, rows, cols, rs, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// A strided, mutable matrix view.
pub struct MatMut<'a, F> {
    pub data: &'a mut [F],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
}

impl<'a, F> MatMut<'a, F> {
    pub fn new(data: &'a mut [F], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: cols }
    }

    pub fn strided(data: &'a mut [F], rows: usize, cols: usize, rs: usize) -> Self {
        Self { data, rows, cols, rs }
    }
}

/// `c = alpha * a * b + beta * c`.
pub fn gemm<F: Real>(alpha: F, a: MatRef<'_, F>, b: MatRef<'_, F>, beta: F, c: MatMut<'_, F>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!(a.rows, c.rows, "gemm output rows");
    assert_eq!(b.cols, c.cols, "gemm output cols");
    a.check();
    b.check();
    if c.rows > 0 && c.cols > 0 {
        assert!((c.rows - 1) * c.rs + c.cols - 1 < c.data.len(), "gemm output out of bounds");
    } else {
        return;
    }
    // SAFETY: bounds checked above; `c` is uniquely borrowed so it cannot alias `a`/`b`.
    unsafe {
        F::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            1,
        );
    }
}

/// `y[m,n] (+)= x[m,k] · w[n,k]ᵀ`, the linear-layer forward.
pub fn matmul_nt<F: Real>(x: &[F], w: &[F], y: &mut [F], m: usize, k: usize, n: usize, acc: bool) {
    let beta = if acc { F::one() } else { F::zero() };
    gemm(F::one(), MatRef::new(x, m, k), MatRef::new(w, n, k).t(), beta, MatMut::new(y, m, n));
}

/// `y[m,n] (+)= x[m,k] · w[k,n]`.
pub fn matmul_nn<F: Real>(x: &[F], w: &[F], y: &mut [F], m: usize, k: usize, n: usize, acc: bool) {
    let beta = if acc { F::one() } else { F::zero() };
    gemm(F::one(), MatRef::new(x, m, k), MatRef::new(w, k, n), beta, MatMut::new(y, m, n));
}

/// `y[m,n] (+)= a[k,m]ᵀ · b[k,n]`, as used for weight gradients.
pub fn matmul_tn<F: Real>(a: &[F], b: &[F], y: &mut [F], k: usize, m: usize, n: usize, acc: bool) {
    let beta = if acc { F::one() } else { F::zero() };
    gemm(F::one(), MatRef::new(a, k, m).t(), MatRef::new(b, k, n), beta, MatMut::new(y, m, n));
}

/// Dot product with eight independent partial sums so the loop vectorises.
#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

/// `y += alpha * x`.
#[inline]
pub fn axpy<F: Real>(alpha: F, x: &[F], y: &mut [F]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

#[inline]
pub fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

#[inline]
pub fn silu<F: Real>(x: F) -> F {
    x * sigmoid(x)
}

/// d/dx of `x·σ(x)`.
#[inline]
pub fn silu_grad<F: Real>(x: F) -> F {
    let s = sigmoid(x);
    s * (F::one() + x * (F::one() - s))
}

pub fn cast_vec<A: Real, B: Real>(v: &[A]) -> Vec<B> {
    v.iter().map(|x| B::of(x.as_f64())).collect()
}
