//! Scalar abstraction for the geometric core.
//!
//! Everything in [`crate::polytope`], [`crate::lewis`], [`crate::barrier`] and
//! [`crate::dynamics`] is written against [`Real`], so the same code runs in
//! `f64` (the default used by the sampler and the CLI) or `f32`.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point type usable by the geometric core.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Display + Debug {
    /// Converts an `f64` literal. Panics only if `T` cannot represent finite `f64` values at all.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal not representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("integer not representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Machine epsilon of the type.
    #[inline]
    fn eps() -> Self {
        Self::default_epsilon()
    }
}

impl Real for f32 {}
impl Real for f64 {}
