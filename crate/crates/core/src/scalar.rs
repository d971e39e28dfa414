//! Floating-point abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::ops::AddAssign;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
///
/// Random draws are always taken in `f64` and narrowed, so a given seed
/// consumes the same stream regardless of the scalar type.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Compensated (Kahan–Babuška/Neumaier) running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KahanSum<T> {
    sum: T,
    compensation: T,
}

impl<T: Scalar> KahanSum<T> {
    pub fn new() -> Self {
        Self { sum: T::zero(), compensation: T::zero() }
    }

    #[inline]
    pub fn add(&mut self, value: T) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn total(&self) -> T {
        self.sum + self.compensation
    }
}

/// `ln(sum(exp(v)))` over a slice, stable for large magnitudes.
pub fn log_sum_exp<T: Scalar>(values: &[T]) -> T {
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let sum = values.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp());
    max + sum.ln()
}
