use std::fmt::{Debug, Display};

use rand::distributions::uniform::SampleUniform;

/// Floating-point scalar everything is generic over: `f32` or `f64`.
///
/// Training defaults to `f32`; gradient-checking tests instantiate the same
/// code at `f64` to get tighter finite-difference tolerances.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssignOps
    + SampleUniform
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Bit-exact equality, used by determinism checks.
    fn bits_eq(self, other: Self) -> bool;

    fn from_f64(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("f64 -> scalar conversion")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("scalar -> f64 conversion")
    }

    fn from_f32(v: f32) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("f32 -> scalar conversion")
    }

    fn as_f32(self) -> f32 {
        num_traits::ToPrimitive::to_f32(&self).expect("scalar -> f32 conversion")
    }
}

impl Scalar for f32 {
    fn bits_eq(self, other: Self) -> bool {
        self.to_bits() == other.to_bits()
    }
}

impl Scalar for f64 {
    fn bits_eq(self, other: Self) -> bool {
        self.to_bits() == other.to_bits()
    }
}
