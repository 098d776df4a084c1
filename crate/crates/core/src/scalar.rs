//! Scalar abstraction so the numeric core runs at either precision.
//!
//! Training and gradient verification default to `f64`; `f32` halves the
//! memory footprint for large runs. Everything downstream of ingestion is
//! generic over [`Scalar`].

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar usable throughout the numeric core.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + ScalarOperand
    + LinalgScalar
    + Sum
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, used for constants and ingest output.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Scalar")
    }

    /// Widen to `f64` for reductions, reporting, and serialization.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Scalar widens to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
