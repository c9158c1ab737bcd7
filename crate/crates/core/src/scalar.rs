use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type the numeric kernels are written against: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal or configuration value into `Self`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `ln(1 + exp(x))` without overflow for large `|x|`.
    #[inline]
    fn softplus(self) -> Self {
        if self > Self::zero() {
            self + (-self).exp().ln_1p()
        } else {
            self.exp().ln_1p()
        }
    }

    /// Logistic sigmoid, branching on sign so neither side overflows.
    #[inline]
    fn sigmoid(self) -> Self {
        let one = Self::one();
        if self >= Self::zero() {
            one / (one + (-self).exp())
        } else {
            let z = self.exp();
            z / (one + z)
        }
    }

    /// `ln(exp(a) + exp(b))`.
    #[inline]
    fn log_add_exp(self, other: Self) -> Self {
        let (hi, lo) = if self >= other {
            (self, other)
        } else {
            (other, self)
        };
        hi + (lo - hi).exp().ln_1p()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_matches_reference_values() {
        // Reference values from 40-digit evaluation.
        assert!((2.0f64.softplus() - 2.126_928_011_042_972_5).abs() < 1e-15);
        assert!(((-2.0f64).softplus() - 0.126_928_011_042_972_5).abs() < 1e-15);
        assert!((0.0f64.softplus() - std::f64::consts::LN_2).abs() < 1e-16);
        assert!((800.0f64.softplus() - 800.0).abs() < 1e-12);
        assert!((-800.0f64).softplus() >= 0.0);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(1000.0f64.sigmoid(), 1.0);
        assert_eq!((-1000.0f64).sigmoid(), 0.0);
        assert!((0.0f32.sigmoid() - 0.5).abs() < 1e-7);
    }

    #[test]
    fn log_add_exp_is_symmetric() {
        let a = 0.3f64;
        let b = -0.7f64;
        let direct = (a.exp() + b.exp()).ln();
        assert!((a.log_add_exp(b) - direct).abs() < 1e-15);
        assert_eq!(a.log_add_exp(b), b.log_add_exp(a));
    }
}
