use core::fmt::{Debug, Display};
use core::iter::Sum;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating-point element type of tensors: `f32` for training, `f64` for
/// verification.
pub trait Scalar:
    num_traits::Float
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
    /// Width in bits (32 or 64).
    const BITS: u32;

    fn of(x: f64) -> Self;
    fn f64(self) -> f64;

    #[inline]
    fn of_usize(x: usize) -> Self {
        Self::of(x as f64)
    }
}

impl Scalar for f32 {
    const BITS: u32 = 32;
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const BITS: u32 = 64;
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}
