//! Scalar abstraction: the whole crate is generic over `f32`/`f64`.

use std::fmt::{Debug, Display};

/// Floating-point scalar the numeric kernels are generic over.
pub trait Scalar:
    num_traits::Float
    + num_traits::FloatConst
    + num_traits::FromPrimitive
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Shorthand for converting an `f64` constant into `Self`.
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 constant must convert")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Euclidean norm of a slice.
pub fn norm2<F: Scalar>(x: &[F]) -> F {
    x.iter()
        .fold(F::zero(), |acc, &v| acc + v * v)
        .sqrt()
}

/// Euclidean distance between two slices of equal length.
pub fn dist2<F: Scalar>(x: &[F], y: &[F]) -> F {
    debug_assert_eq!(x.len(), y.len());
    x.iter()
        .zip(y)
        .fold(F::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b))
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norms() {
        assert_eq!(norm2(&[3.0f64, 4.0]), 5.0);
        assert_eq!(dist2(&[1.0f64, 1.0], [4.0, 5.0].as_slice()), 5.0);
        assert_eq!(norm2::<f32>(&[]), 0.0);
    }

    #[test]
    fn constant_conversion() {
        assert_eq!(<f64 as Scalar>::c(0.5), 0.5);
        assert_eq!(<f32 as Scalar>::c(0.25), 0.25f32);
    }
}
