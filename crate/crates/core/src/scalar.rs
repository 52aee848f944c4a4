//! Scalar abstraction for the vector math.
//!
//! Embeddings are stored in whatever float width the caller picks (`f32` by
//! default); every reduction (dot products, norms, distances) is carried out
//! in `f64` regardless of the storage type.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, NumCast};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// floating point storage type for embedding coordinates: f32 or f64
pub trait Scalar:
    Float
    + FromPrimitive
    + NumCast
    + Debug
    + Default
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Lossless widening for f32/f64 storage.
    fn widen(self) -> f64;

    /// Narrowing from the f64 accumulator; may round.
    fn narrow(value: f64) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }

    #[inline]
    fn narrow(value: f64) -> Self {
        value as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn widen(self) -> f64 {
        self
    }

    #[inline]
    fn narrow(value: f64) -> Self {
        value
    }
}

/// Dot product accumulated in f64.
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.widen() * y.widen()).sum()
}

/// Squared euclidean norm accumulated in f64.
#[inline]
pub fn norm_sq<S: Scalar>(a: &[S]) -> f64 {
    a.iter().map(|x| x.widen() * x.widen()).sum()
}

/// Squared euclidean distance accumulated in f64.
#[inline]
pub fn dist_sq<S: Scalar>(a: &[S], b: &[S]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x.widen() - y.widen();
            d * d
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widen_narrow_roundtrip() {
        assert_eq!(f32::narrow(0.25f32.widen()), 0.25f32);
        assert_eq!(f64::narrow(1.5), 1.5);
    }

    #[test]
    fn reductions_match_by_hand() {
        let a = [1.0f32, 2.0, 3.0];
        let b = [4.0f32, 5.0, 6.0];
        assert_eq!(dot(&a, &b), 32.0);
        assert_eq!(norm_sq(&a), 14.0);
        assert_eq!(dist_sq(&a, &b), 27.0);
    }
}
