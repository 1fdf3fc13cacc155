//! Floating-point abstraction shared by the scoring and metric code.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar used for scores and error metrics.
///
/// Implemented for `f32` and `f64`. Everything in [`crate::profiler`] and
/// [`crate::evaluator`] is generic over it; the crate root exposes `f64`
/// aliases for the common case.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + Serialize + DeserializeOwned + 'static
{
    /// Lossless-enough conversion from a small integer count or score.
    fn of_u32(v: u32) -> Self {
        <Self as FromPrimitive>::from_u32(v).expect("u32 fits every float type")
    }

    fn of_usize(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("usize fits every float type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
