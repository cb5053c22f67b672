//! Scalar abstractions.
//!
//! The per-set probability bounds and the exact Poisson-binomial recursion only
//! need field arithmetic, so they are generic over [`Prob`], which is satisfied
//! by `f32`, `f64` and exact rationals such as `num_rational::BigRational`.
//! Anything involving the normal or chi-square distributions needs [`Real`].

use std::fmt::{Debug, Display, LowerExp};

use num_traits::{Float, FloatConst, FromPrimitive, Num, ToPrimitive};

/// Field-like scalar used for probabilities and sensitivity parameters.
pub trait Prob: Clone + PartialOrd + Num + FromPrimitive + Debug {
    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("count representable in scalar type")
    }
}

impl<T> Prob for T where T: Clone + PartialOrd + Num + FromPrimitive + Debug {}

/// Floating-point scalar with the transcendental functions the tail
/// approximations and combiners need.
///
/// Normal and chi-square special functions are evaluated in `f64` and cast
/// back, so `f32` instantiations inherit `f64` accuracy for those steps.
pub trait Real:
    Prob
    + Float
    + FloatConst
    + ToPrimitive
    + Copy
    + Send
    + Sync
    + Display
    + LowerExp
    + Default
    + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
