use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

/// Scalar element type of a [`super::Tensor`].
///
/// The library trains and infers in `f32`; the `f64` instantiation exists for
/// the finite-difference gradient checker, which needs the extra precision.
pub trait Elem:
    Float + FromPrimitive + rustfft::FftNum + Display + Debug + Sum + Send + Sync + 'static
{
    /// Lossless widening to `f64` (exact for both supported types).
    fn f64(self) -> f64;
    /// Conversion from `f64`, rounding to nearest for `f32`.
    fn from_f(v: f64) -> Self;
}

impl Elem for f32 {
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f(v: f64) -> Self {
        v as f32
    }
}

impl Elem for f64 {
    #[inline]
    fn f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f(v: f64) -> Self {
        v
    }
}
