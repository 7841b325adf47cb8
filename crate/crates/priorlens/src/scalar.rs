//! Scalar abstraction for the numeric core.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar the geometry and attention math is generic over.
pub trait Real: Float + FromPrimitive + NumAssign + Sum + Debug + Copy + 'static {
    /// Shorthand for lossy conversion from `f64` literals.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}
