//! Numeric abstraction for metric values.
//!
//! Every metric in this crate is a ratio of two counts (edit operations over
//! string length, hits over predictions, consistent pairs over all pairs), so
//! a scalar only needs to be built from a ratio of integers. Floats give the
//! usual reporting values; [`Exact`] gives bit-for-bit rational answers that
//! tests use as an oracle.

use std::fmt::Debug;

use num_rational::Rational64;
use num_traits::Num;

pub trait Scalar: Num + Copy + PartialOrd + Debug {
    fn from_ratio(num: u64, den: u64) -> Self;

    fn to_f64(self) -> f64;

    fn half() -> Self {
        Self::from_ratio(1, 2)
    }
}

impl Scalar for f64 {
    fn from_ratio(num: u64, den: u64) -> Self {
        num as f64 / den as f64
    }

    fn to_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    fn from_ratio(num: u64, den: u64) -> Self {
        num as f32 / den as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for Rational64 {
    fn from_ratio(num: u64, den: u64) -> Self {
        Rational64::new(num as i64, den as i64)
    }

    fn to_f64(self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}

pub type Exact = Rational64;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios() {
        assert_eq!(f64::from_ratio(3, 4), 0.75);
        assert_eq!(f32::half(), 0.5);
        assert_eq!(Exact::from_ratio(2, 4), Exact::new(1, 2));
        assert_eq!(Exact::from_ratio(1, 3).to_f64(), 1.0 / 3.0);
    }
}
