//! Scalar abstraction for the model formulas.
//!
//! The link functions, reliability ratios, and prior densities are plain
//! field arithmetic, so they are written once over a floating-point scalar
//! and instantiated at `f64` (the estimation stack) or `f32`.

use num_traits::float::FloatConst;
use num_traits::Float;

/// Floating-point scalar: f32 or f64.
pub trait Scalar: Float + FloatConst + std::fmt::Debug + Send + Sync + 'static {
    /// Lossy conversion from an `f64` constant.
    fn c(x: f64) -> Self;
}

impl Scalar for f32 {
    fn c(x: f64) -> Self {
        x as f32
    }
}

impl Scalar for f64 {
    fn c(x: f64) -> Self {
        x
    }
}

/// ln(2π)/2, the normal log-density constant.
pub(crate) fn half_ln_two_pi<F: Scalar>() -> F {
    (F::TAU()).ln() / F::c(2.0)
}
