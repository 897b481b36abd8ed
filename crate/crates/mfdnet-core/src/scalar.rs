//! Scalar abstraction over `f32`/`f64`.
//!
//! Every transcendental goes through `libm` rather than `std`, so the same
//! bits come out of a `no_std` build and a hosted build. Training typically
//! runs in `f32`; exactness-sensitive checks (pyramid round-trips, gradient
//! verification) instantiate the same code in `f64`.

use core::fmt::{Debug, Display};
use core::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// Floating-point element type for tensors and parameters.
pub trait Real:
    Copy
    + PartialOrd
    + Debug
    + Display
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    /// Serialization tag: 0 = f32, 1 = f64.
    const DTYPE: u8;
    /// Bytes per element in serialized form.
    const BYTE_WIDTH: usize;

    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }

    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn erf(self) -> Self;
    fn tanh(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self;
    fn powf(self, e: Self) -> Self;
    fn abs(self) -> Self;
    fn floor(self) -> Self;
    fn is_finite(self) -> bool;

    fn max(self, other: Self) -> Self {
        if self > other {
            self
        } else {
            other
        }
    }
    fn min(self, other: Self) -> Self {
        if self < other {
            self
        } else {
            other
        }
    }
    fn clamp01(self) -> Self {
        self.max(Self::ZERO).min(Self::ONE)
    }

    /// Append this value's little-endian bytes to `out`.
    fn write_le(self, out: &mut alloc::vec::Vec<u8>);
    /// Decode one value from the first `BYTE_WIDTH` bytes of `src`.
    fn read_le(src: &[u8]) -> Self;
}

impl Real for f32 {
    const DTYPE: u8 = 0;
    const BYTE_WIDTH: usize = 4;
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn sqrt(self) -> Self {
        libm::sqrtf(self)
    }
    fn exp(self) -> Self {
        libm::expf(self)
    }
    fn ln(self) -> Self {
        libm::logf(self)
    }
    fn erf(self) -> Self {
        libm::erff(self)
    }
    fn tanh(self) -> Self {
        libm::tanhf(self)
    }
    fn sin(self) -> Self {
        libm::sinf(self)
    }
    fn cos(self) -> Self {
        libm::cosf(self)
    }
    fn tan(self) -> Self {
        libm::tanf(self)
    }
    fn powf(self, e: Self) -> Self {
        libm::powf(self, e)
    }
    fn abs(self) -> Self {
        libm::fabsf(self)
    }
    fn floor(self) -> Self {
        libm::floorf(self)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    fn write_le(self, out: &mut alloc::vec::Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(src: &[u8]) -> Self {
        f32::from_le_bytes([src[0], src[1], src[2], src[3]])
    }
}

impl Real for f64 {
    const DTYPE: u8 = 1;
    const BYTE_WIDTH: usize = 8;
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        libm::sqrt(self)
    }
    fn exp(self) -> Self {
        libm::exp(self)
    }
    fn ln(self) -> Self {
        libm::log(self)
    }
    fn erf(self) -> Self {
        libm::erf(self)
    }
    fn tanh(self) -> Self {
        libm::tanh(self)
    }
    fn sin(self) -> Self {
        libm::sin(self)
    }
    fn cos(self) -> Self {
        libm::cos(self)
    }
    fn tan(self) -> Self {
        libm::tan(self)
    }
    fn powf(self, e: Self) -> Self {
        libm::pow(self, e)
    }
    fn abs(self) -> Self {
        libm::fabs(self)
    }
    fn floor(self) -> Self {
        libm::floor(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn write_le(self, out: &mut alloc::vec::Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(src: &[u8]) -> Self {
        f64::from_le_bytes([
            src[0], src[1], src[2], src[3], src[4], src[5], src[6], src[7],
        ])
    }
}

/// Standard-normal CDF, used by the exact (erf-based) GELU.
pub fn phi<F: Real>(x: F) -> F {
    let half = F::from_f64(0.5);
    let inv_sqrt2 = F::from_f64(core::f64::consts::FRAC_1_SQRT_2);
    half * (F::ONE + (x * inv_sqrt2).erf())
}

/// Standard-normal PDF, used by the GELU derivative.
pub fn phi_pdf<F: Real>(x: F) -> F {
    let inv_sqrt_2pi = F::from_f64(1.0 / libm::sqrt(2.0 * core::f64::consts::PI));
    inv_sqrt_2pi * (F::from_f64(-0.5) * x * x).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_matches_reference_points() {
        // Φ(0) = 0.5 exactly; Φ(1.96) ≈ 0.975 (classic table value).
        assert_eq!(phi(0.0f64), 0.5);
        assert!((phi(1.96f64) - 0.9750021048517795).abs() < 1e-12);
        assert!((phi(-1.96f64) - 0.0249978951482205).abs() < 1e-12);
    }

    #[test]
    fn f32_and_f64_agree_through_libm() {
        for &x in &[-2.0f64, -0.5, 0.0, 0.3, 1.7] {
            let a = Real::erf(x as f32) as f64;
            let b = Real::erf(x);
            assert!((a - b).abs() < 1e-6, "erf mismatch at {x}: {a} vs {b}");
        }
    }
}
