//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! All math is written against [`Scalar`], which is implemented for `f32` and
//! `f64`. The binary file formats always store `f32` (embeddings) or `f64`
//! (spectra, features) on disk; values are converted at the I/O boundary.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating-point scalar usable by the spectral, QRE and analytics code.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Display + Debug + LowerExp + Send + Sync + 'static
{
    /// Short name recorded in provenance metadata.
    const NAME: &'static str;

    /// Converts an `f64` literal. Out-of-range values saturate to infinity.
    #[inline]
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    #[inline]
    fn from_usize_lossy(value: usize) -> Self {
        Self::lit(value as f64)
    }

    /// Machine epsilon of the concrete type.
    fn machine_eps() -> Self;

    /// Smallest meaningful absolute tolerance for invariant checks. Zero for
    /// `f64`; single precision cannot resolve the 1e-10 bands used throughout.
    const TOL_FLOOR: f64;

    /// A tolerance stated for double precision, widened to [`Self::TOL_FLOOR`].
    #[inline]
    fn tol(double_precision: f64) -> Self {
        Self::lit(double_precision.max(Self::TOL_FLOOR))
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
    const TOL_FLOOR: f64 = 1e-3;

    fn machine_eps() -> Self {
        f32::EPSILON
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
    const TOL_FLOOR: f64 = 0.0;

    fn machine_eps() -> Self {
        f64::EPSILON
    }
}

/// `x ln x` with the convention `0 ln 0 = 0`. Non-positive inputs contribute 0.
#[inline]
pub(crate) fn xlnx<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x * x.ln()
    } else {
        T::zero()
    }
}
