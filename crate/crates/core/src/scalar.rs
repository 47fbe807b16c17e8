//! Scalar abstraction: the whole pipeline is generic over the real type.

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar the library is generic over: `f32` or `f64`.
///
/// Combines the `num_traits` float hierarchy with `nalgebra`'s `RealField`
/// so the same code drives both the closed-form pulse math and the dense
/// complex linear algebra. Method calls shared by both hierarchies (`sin`,
/// `abs`, ...) are disambiguated at the call site via `Float::`.
pub trait RealScalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + nalgebra::RealField
    + Default
    + Copy
    + Send
    + Sync
    + std::fmt::Display
    + std::fmt::LowerExp
    + 'static
{
    /// Lossless-enough conversion from `f64` for constants and configs.
    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant not representable")
    }
}

impl RealScalar for f32 {}
impl RealScalar for f64 {}
