//! Scalar abstraction for the numeric core.
//!
//! Every geometric and optimization routine in this crate is generic over a
//! [`Real`] scalar so the same code runs in `f32` or `f64`. The simulator and
//! CLI use the `f64` aliases exported from the crate root; `f32` is useful for
//! embedded targets or quick precision experiments.

use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the kinematics, barrier, and QP code.
///
/// The bound combines `nalgebra`'s field operations (so vectors, matrices and
/// factorizations work) with `num-traits` casts (so tolerance constants written
/// as `f64` literals can be converted without `as` truncation surprises).
pub trait Real: nalgebra::RealField + FromPrimitive + ToPrimitive + Copy {
    /// `true` when the value is neither NaN nor infinite.
    fn finite(self) -> bool;
}

impl Real for f32 {
    fn finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Real for f64 {
    fn finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Converts an `f64` literal (tolerances, physical constants) into `T`.
///
/// Panics only if `T` cannot represent any finite approximation of `v`, which
/// cannot happen for the IEEE types this crate supports.
#[inline]
pub fn real<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("finite f64 constant must convert to scalar type")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_conversion_roundtrips() {
        let x: f64 = real(0.05);
        assert_eq!(x, 0.05);
        let y: f32 = real(0.05);
        assert_eq!(y, 0.05_f32);
    }

    #[test]
    fn finite_detects_nan_and_infinity() {
        assert!(1.0_f64.finite());
        assert!(!f64::NAN.finite());
        assert!(!f32::INFINITY.finite());
    }
}
