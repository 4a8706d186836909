use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

/// Floating-point element type of the engine. `f64` is used for gradient
/// checks and oracles, `f32` for training.
pub trait Real:
    Float
    + FromPrimitive
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
    const NAME: &'static str;

    #[inline]
    fn lit(x: f64) -> Self {
        // from_f64 never fails for f32/f64, it rounds or saturates.
        Self::from_f64(x).unwrap_or_else(Self::nan)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";
}

impl Real for f64 {
    const NAME: &'static str = "f64";
}

/// Dot product with eight independent partial sums so the loop vectorizes.
/// Summation order is fixed, so results are reproducible bit for bit.
#[inline]
pub fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [R::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = R::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<R: Real>(alpha: R, x: &[R], y: &mut [R]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// `c[n×m] += a[n×k] · b[k×m]`, all row-major.
pub fn gemm_nn<R: Real>(a: &[R], b: &[R], c: &mut [R], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let crow = &mut c[i * m..(i + 1) * m];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av != R::zero() {
                axpy(av, &b[p * m..(p + 1) * m], crow);
            }
        }
    }
}

/// `c[n×m] += a[n×k] · b[m×k]ᵀ`
pub fn gemm_nt<R: Real>(a: &[R], b: &[R], c: &mut [R], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            c[i * m + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `c[k×m] += a[n×k]ᵀ · b[n×m]`
pub fn gemm_tn<R: Real>(a: &[R], b: &[R], c: &mut [R], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            if av != R::zero() {
                axpy(av, brow, &mut c[p * m..(p + 1) * m]);
            }
        }
    }
}
