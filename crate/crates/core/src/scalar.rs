//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type the engine can run on.
///
/// Implemented for `f32` and `f64`. Everything in the crate is generic over
/// this trait; the `*64` aliases at the crate root pin it to `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal into the scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `x / (1 - exp(-x / s))`, continuous through the removable singularity at
/// `x = 0` where it tends to `s`.
#[inline]
pub fn exprel_rate<T: Scalar>(x: T, s: T) -> T {
    let z = x / s;
    if z.abs() < T::lit(1e-6) {
        s * (T::one() + z / T::lit(2.0))
    } else {
        s * z / -(-z).exp_m1()
    }
}

/// Number of whole `step`s in `span`, or `None` if `span` is not an integer
/// multiple of `step` within a relative slack of `1e-9`.
pub fn whole_steps<T: Scalar>(span: T, step: T) -> Option<usize> {
    if !(step > T::zero()) || span < T::zero() || !span.is_finite() {
        return None;
    }
    let ratio = span / step;
    let n = ratio.round();
    if (ratio - n).abs() <= T::lit(1e-9) * n.max(T::one()) {
        n.to_usize()
    } else {
        None
    }
}
