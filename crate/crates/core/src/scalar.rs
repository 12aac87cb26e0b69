//! Scalar abstraction shared by the deterministic kernels.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating-point type usable by the map, schedule, Ulam and Green-Kubo kernels.
///
/// Implemented for `f32` and `f64`. The Monte Carlo layers are `f64` only.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    /// Absolute residual accepted from an inverse-branch solve.
    const INVERSE_RESIDUAL: f64;

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in the scalar type")
    }

    #[inline]
    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("count representable in the scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn half() -> Self {
        Self::lit(0.5)
    }

    #[inline]
    fn two() -> Self {
        Self::lit(2.0)
    }
}

impl Real for f64 {
    const INVERSE_RESIDUAL: f64 = 1e-13;
}

impl Real for f32 {
    const INVERSE_RESIDUAL: f64 = 1e-6;
}

/// Sum in index order. Float addition is not associative, so every reduction
/// that feeds an artifact goes through here rather than a parallel reducer.
#[inline]
pub fn ordered_sum<S: Real>(values: impl IntoIterator<Item = S>) -> S {
    values.into_iter().fold(S::zero(), |acc, v| acc + v)
}
