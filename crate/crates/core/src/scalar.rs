//! Scalar abstraction shared by the geometric core.
//!
//! Geometry, the PnP solver, mesh loading and the pose-error metrics are
//! written once against [`RealScalar`] and instantiated for `f64` (the default
//! used by the pipeline) and `f32`.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait RealScalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
    /// Tolerance on `‖RᵀR − I‖∞` accepted for a rotation matrix.
    const ORTHONORMAL_TOL: f64;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl RealScalar for f64 {
    const ORTHONORMAL_TOL: f64 = 1e-9;
}

impl RealScalar for f32 {
    const ORTHONORMAL_TOL: f64 = 1e-5;
}
