//! Scalar abstraction shared by every numeric module.

use nalgebra::RealField;

/// Real scalar usable by the factorizations, the solver and the dynamics.
///
/// Implemented for `f32` and `f64`. Tolerances quoted in the documentation are
/// for `f64`; the `f32` instantiation is useful for quick experiments only.
pub trait Scalar: RealField + Copy + num_traits::FromPrimitive {
    /// Converts an `f64` literal into the scalar type.
    fn lit(x: f64) -> Self {
        nalgebra::convert(x)
    }

    fn to_f64(self) -> f64;
}

impl Scalar for f64 {
    fn to_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
}
