//! Scalar abstraction shared by every geometric routine in the crate.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point type the geometry is generic over (`f32` or `f64`).
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {
    /// Converts an `f64` literal into `Self`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("real is convertible to f64")
    }

    /// Tolerance used for orthonormality checks: 1e-9 in `f64`, widened to
    /// the precision floor of narrower types.
    #[inline]
    fn orthonormal_tolerance() -> Self {
        let floor = Self::default_epsilon() * Self::lit(1024.0);
        let tol = Self::lit(1e-9);
        if floor > tol {
            floor
        } else {
            tol
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}
