use core::fmt::{Debug, Display};
use num_traits::Float;

/// Floating point element type of a [`Tensor`](crate::Tensor).
///
/// Training runs in `f32`; gradient checks switch the same code paths to `f64`.
pub trait Scalar: Float + Default + Debug + Display + Send + Sync + 'static {
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
