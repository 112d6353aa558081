//! Floating-point abstraction shared by the network and loss code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar usable by the learners: `f32` or `f64`.
///
/// Simulation and on-disk data are always `f64`; values cross into the
/// learners through [`Scalar::of`] and back out through [`Scalar::to_f64`].
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`.
    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
}

/// Sum of a sequence in a canonical order (ascending by total ordering).
///
/// The result does not depend on the order of the input, which makes
/// set-valued reductions bit-exact under permutation.
pub fn ordered_sum<T: Scalar>(values: &mut [T]) -> T {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or_else(|| a.is_nan().cmp(&b.is_nan())));
    values.iter().fold(T::zero(), |acc, &v| acc + v)
}
