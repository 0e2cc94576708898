//! Scalar abstraction shared by the deterministic parts of the crate.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, NumCast};

/// Floating-point type the closed forms, boundary valuation and policy
/// iteration are generic over. Implemented for `f32` and `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + NumCast + Debug + Display + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("literal representable in scalar type")
}

/// Widens `T` to `f64` (used for reporting).
#[inline]
pub fn to_f64<T: Real>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// `y log y` with the convention `0 log 0 = 0`.
#[inline]
pub fn xlogx<T: Real>(y: T) -> T {
    if y <= T::zero() {
        T::zero()
    } else {
        y * y.ln()
    }
}
