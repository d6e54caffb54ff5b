//! Floating-point scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point element type: `f32` or `f64`.
///
/// Everything downstream of the tape is written against this trait. The
/// crate root exposes `f64` aliases, which is what the experiments use.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, rounding to the nearest representable value.
    fn lit(v: f64) -> Self;

    /// Complementary error function.
    fn erfc(self) -> Self;

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Rounds to the nearest integer, ties to even.
    fn round_half_even(self) -> Self {
        let r = self.round();
        if (self - self.trunc()).abs() == Self::lit(0.5) {
            // a tie n + 0.5 halves to n/2 + 0.25, which rounds to the even neighbour
            let two = Self::lit(2.0);
            two * (self / two).round()
        } else {
            r
        }
    }
}

impl Scalar for f32 {
    fn lit(v: f64) -> Self {
        v as f32
    }

    fn erfc(self) -> Self {
        libm::erfcf(self)
    }
}

impl Scalar for f64 {
    fn lit(v: f64) -> Self {
        v
    }

    fn erfc(self) -> Self {
        libm::erfc(self)
    }
}
