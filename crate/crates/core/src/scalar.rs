use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar the tabular machinery is generic over: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only for values the type cannot hold.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    /// Tolerance for probability-simplex checks: 1e-12 at double precision,
    /// scaled up for narrower types.
    fn simplex_tol() -> Self {
        let floor = Self::lit(1e-12);
        let scaled = Self::epsilon() * Self::lit(64.0);
        if scaled > floor {
            scaled
        } else {
            floor
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `x log x` with the convention `0 log 0 = 0`.
pub fn xlogx<T: Scalar>(x: T) -> T {
    if x <= T::zero() {
        T::zero()
    } else {
        x * x.ln()
    }
}

/// Shannon entropy (nats) of a probability vector.
pub fn entropy<T: Scalar>(p: &[T]) -> T {
    -p.iter().map(|&x| xlogx(x)).sum::<T>()
}

/// Numerically stable `log Σ exp`.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<T>().ln()
}

/// Softmax of `xs`, written into `out`.
pub fn softmax_into<T: Scalar>(xs: &[T], out: &mut [T]) {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (o, &x) in out.iter_mut().zip(xs) {
        *o = (x - max).exp();
        total = total + *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}

/// Index of the maximum with lowest-index tie-break.
pub fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_conventions() {
        assert_eq!(entropy(&[1.0f64, 0.0]), 0.0);
        assert!((entropy(&[0.5f64, 0.5]) - 2f64.ln()).abs() < 1e-15);
        assert!((entropy(&[0.5f32, 0.5]) - 2f32.ln()).abs() < 1e-6);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = log_sum_exp(&[1000.0f64, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0f64, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0f64, 0.0]), 0);
    }
}
