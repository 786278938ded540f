//! Floating-point abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Scalar type the model is computed in: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Natural log of the gamma function for positive arguments.
    fn ln_gamma(self) -> Self;
}

impl Real for f64 {
    fn ln_gamma(self) -> Self {
        statrs::function::gamma::ln_gamma(self)
    }
}

impl Real for f32 {
    fn ln_gamma(self) -> Self {
        statrs::function::gamma::ln_gamma(self as f64) as f32
    }
}

/// Converts an `f64` constant into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 constant representable in scalar type")
}

#[inline]
pub fn from_count<T: Real>(n: u32) -> T {
    T::from_u32(n).expect("count representable in scalar type")
}

#[inline]
pub fn from_usize<T: Real>(n: usize) -> T {
    T::from_usize(n).expect("size representable in scalar type")
}

/// Normalizes log-weights in place into probabilities (max-shifted).
pub fn normalize_log<T: Real>(weights: &mut [T]) {
    let max = weights
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let mut total = T::zero();
    for w in weights.iter_mut() {
        *w = (*w - max).exp();
        total += *w;
    }
    for w in weights.iter_mut() {
        *w /= total;
    }
}

/// Draws an index from normalized probabilities using one uniform variate.
pub fn draw_index<T: Real>(probs: &[T], u: f64) -> usize {
    let target = lit::<T>(u);
    let mut acc = T::zero();
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if target < acc {
            return i;
        }
    }
    // rounding can leave acc slightly under 1
    probs
        .iter()
        .rposition(|&p| p > T::zero())
        .unwrap_or(probs.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_matches_factorials() {
        assert!((Real::ln_gamma(5.0f64) - 24f64.ln()).abs() < 1e-12);
        assert!((Real::ln_gamma(5.0f32) - 24f32.ln()).abs() < 1e-5);
    }

    #[test]
    fn normalize_handles_large_offsets() {
        let mut w = vec![-1000.0f64, -1000.0 + 2f64.ln()];
        normalize_log(&mut w);
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((w[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn draw_index_respects_cumulative_mass() {
        let p = [0.25f64, 0.5, 0.25];
        assert_eq!(draw_index(&p, 0.1), 0);
        assert_eq!(draw_index(&p, 0.3), 1);
        assert_eq!(draw_index(&p, 0.9), 2);
        assert_eq!(draw_index(&[0.5f64, 0.5, 0.0], 0.999_999_999_999_999_9), 1);
    }
}
