//! Scalar abstraction for the dense-field core.
//!
//! The field operations in [`crate::grid`] are written against this trait so
//! they work for `f32` and `f64` alike. Everything gradient-related (the tape,
//! losses, training) is pinned to `f64`; see the aliases at the crate root.

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar usable as a grid element.
pub trait Scalar: Float + FromPrimitive + NumAssign + Copy + std::fmt::Debug + 'static {
    /// Lossless-enough conversion from `f64` for kernel constants.
    fn from_f64c(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
