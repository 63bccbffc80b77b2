//! Float math shims and small numeric helpers.
//!
//! `no_std` leaves `f64` without transcendentals, so [`FloatExt`] routes them
//! through `libm`. Everything downstream uses these methods instead of the
//! std intrinsics, which keeps results bit-identical across targets.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// `f64` transcendentals backed by `libm`.
pub trait FloatExt {
    fn sqrt_(self) -> f64;
    fn ln_(self) -> f64;
    fn log10_(self) -> f64;
    fn log2_(self) -> f64;
    fn exp_(self) -> f64;
    fn powf_(self, p: f64) -> f64;
    fn powi_(self, p: i32) -> f64;
    fn sin_(self) -> f64;
    fn cos_(self) -> f64;
    fn tanh_(self) -> f64;
    fn floor_(self) -> f64;
    fn ceil_(self) -> f64;
    fn round_(self) -> f64;
    fn abs_(self) -> f64;
}

impl FloatExt for f64 {
    #[inline]
    fn sqrt_(self) -> f64 {
        libm::sqrt(self)
    }
    #[inline]
    fn ln_(self) -> f64 {
        libm::log(self)
    }
    #[inline]
    fn log10_(self) -> f64 {
        libm::log10(self)
    }
    #[inline]
    fn log2_(self) -> f64 {
        libm::log2(self)
    }
    #[inline]
    fn exp_(self) -> f64 {
        libm::exp(self)
    }
    #[inline]
    fn powf_(self, p: f64) -> f64 {
        libm::pow(self, p)
    }
    #[inline]
    fn powi_(self, p: i32) -> f64 {
        libm::pow(self, p as f64)
    }
    #[inline]
    fn sin_(self) -> f64 {
        libm::sin(self)
    }
    #[inline]
    fn cos_(self) -> f64 {
        libm::cos(self)
    }
    #[inline]
    fn tanh_(self) -> f64 {
        libm::tanh(self)
    }
    #[inline]
    fn floor_(self) -> f64 {
        libm::floor(self)
    }
    #[inline]
    fn ceil_(self) -> f64 {
        libm::ceil(self)
    }
    #[inline]
    fn round_(self) -> f64 {
        libm::round(self)
    }
    #[inline]
    fn abs_(self) -> f64 {
        libm::fabs(self)
    }
}

pub const PI: f64 = core::f64::consts::PI;
pub const TAU: f64 = 2.0 * core::f64::consts::PI;

/// Zeroth-order modified Bessel function of the first kind, by power series.
///
/// Converges quickly for the arguments a Kaiser window produces (|x| <= ~25);
/// terms are added until they stop changing the sum at 1e-16 relative.
pub fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / ((k * k) as f64);
        sum += term;
        if term < sum * 1e-16 {
            break;
        }
    }
    sum
}

/// Normalized sinc: sin(pi x) / (pi x), with sinc(0) = 1.
pub fn sinc(x: f64) -> f64 {
    if x.abs_() < 1e-12 {
        1.0
    } else {
        let px = PI * x;
        px.sin_() / px
    }
}

/// Invert a dense square matrix in place via Gauss-Jordan with partial
/// pivoting. `a` is row-major `n x n`.
///
/// Errors if a pivot falls below 1e-12, which in this codebase means the mel
/// filterbank Gram matrix is rank-deficient.
pub fn invert_matrix(a: &[f64], n: usize) -> Result<Vec<f64>> {
    if a.len() != n * n {
        return Err(Error::DimMismatch { expected: n * n, got: a.len() });
    }
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_abs = m[col * n + col].abs_();
        for row in (col + 1)..n {
            let v = m[row * n + col].abs_();
            if v > pivot_abs {
                pivot_abs = v;
                pivot_row = row;
            }
        }
        if pivot_abs < 1e-12 {
            return Err(Error::Numeric(alloc::format!(
                "singular matrix: pivot {pivot_abs:.3e} at column {col}"
            )));
        }
        if pivot_row != col {
            for j in 0..n {
                m.swap(col * n + j, pivot_row * n + j);
                inv.swap(col * n + j, pivot_row * n + j);
            }
        }
        let pivot = m[col * n + col];
        for j in 0..n {
            m[col * n + j] /= pivot;
            inv[col * n + j] /= pivot;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let factor = m[row * n + col];
            if factor == 0.0 {
                continue;
            }
            for j in 0..n {
                m[row * n + j] -= factor * m[col * n + j];
                inv[row * n + j] -= factor * inv[col * n + j];
            }
        }
    }
    Ok(inv)
}
