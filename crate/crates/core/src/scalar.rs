//! Scalar abstraction: every numerical routine in this crate is generic over
//! a floating-point type implementing [`Real`]. `f64` is what the CLI and the
//! verification suites use; `f32` is supported for callers that want the
//! smaller footprint and can live with the precision.

use num_traits::float::FloatConst;
use num_traits::{Float, FromPrimitive};
use rand::distr::uniform::SampleUniform;
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating-point scalar usable throughout the crate.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + SampleUniform
    + Serialize
    + DeserializeOwned
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Natural log of the gamma function (positive arguments only here).
    fn ln_gamma(self) -> Self;

    /// Lossy conversion from `f64`, for literals and tolerances.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable in scalar type")
    }

    /// Conversion from a count.
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }
}

impl Real for f64 {
    fn ln_gamma(self) -> Self {
        libm::lgamma(self)
    }
}

impl Real for f32 {
    fn ln_gamma(self) -> Self {
        libm::lgammaf(self)
    }
}

/// log(n!) computed through the gamma function.
pub fn ln_factorial<S: Real>(n: u64) -> S {
    S::of_usize(n as usize + 1).ln_gamma()
}
