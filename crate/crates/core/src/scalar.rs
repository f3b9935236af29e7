//! Floating-point abstraction shared by every numeric routine.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use ndarray::NdFloat;
use num_traits::{FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar the algorithms are written against: `f32` or `f64`.
///
/// Random draws are always made in `f64` and then narrowed, so a given seed
/// produces the same underlying stream for either precision.
pub trait Real:
    NdFloat
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Display
    + Debug
    + LowerExp
    + rustfft::FftNum
    + rustdct::DctNum
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal or sample.
    fn lit(v: f64) -> Self;

    fn as_f64(self) -> f64;

    fn from_count(v: usize) -> Self {
        Self::lit(v as f64)
    }
}

impl Real for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Euclidean norm.
pub fn norm2<T: Real>(v: &[T]) -> T {
    v.iter().map(|&a| a * a).sum::<T>().sqrt()
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}
