//! Scalar abstraction for the tensor engine.
//!
//! The tensor and tape code is generic over the element type so the same
//! kernels instantiate at `f32` or `f64`. The rest of the crate works at
//! `f64` through the aliases exported from the crate root: double precision
//! keeps finite-difference gradient checks clean and runs are bit-reproducible
//! under a fixed seed.

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type: f32 or f64.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Lossy conversion from f64 (exact for f64 itself).
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
