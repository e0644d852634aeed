//! Scalar abstraction shared by the numerical modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar used by the curve, model, pricer and grid code.
///
/// Implemented for `f32` and `f64`. Monte Carlo accumulations are carried
/// out in the scalar type itself, so `f64` is the type to use for
/// production runs; `f32` is useful for memory-bound surface storage and
/// for checking that nothing silently depends on double precision.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only if the value is not representable,
    /// which cannot happen for finite literals in `f32`/`f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Minimal ordered-field interface for quantile functionals that never need
/// a square root. Implemented by `f32`, `f64` and exact rationals such as
/// `num_rational::Ratio<i64>`, so risk-measure identities can be checked in
/// exact arithmetic.
pub trait OrderedField:
    num_traits::Num + Copy + PartialOrd + FromPrimitive + Debug + Send + Sync
{
}

impl<T> OrderedField for T where
    T: num_traits::Num + Copy + PartialOrd + FromPrimitive + Debug + Send + Sync
{
}
