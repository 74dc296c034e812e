//! Scalar abstraction for the numeric kernels.
//!
//! Vectorization, clustering and scoring are written against [`Real`] so the
//! same code runs at `f32` or `f64` precision; concrete aliases live at the
//! crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar usable by the numeric kernels.
pub trait Real:
    Float + FromPrimitive + AddAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossless-enough conversion from `usize` counts (document counts,
    /// cluster sizes). Counts in this crate stay far below 2^52.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }
}

impl<T> Real for T where
    T: Float + FromPrimitive + AddAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
}

/// Squared Euclidean distance between two equal-length slices.
pub fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Euclidean distance between two equal-length slices.
pub fn dist<T: Real>(a: &[T], b: &[T]) -> T {
    sq_dist(a, b).sqrt()
}

/// L2 norm of a slice.
pub fn norm<T: Real>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// Dot product of two equal-length slices.
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}
