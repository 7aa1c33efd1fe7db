//! Scalar abstraction so the whole model can run at `f32` or `f64`.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar used throughout the model.
///
/// Everything numeric in this crate is generic over `Real`; the concrete
/// aliases at the crate root pick `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum<Self>
    + fmt::Debug
    + fmt::Display
    + Default
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// One standard-normal draw, used by the Gaussian demand profiles.
    fn standard_normal<G: Rng + ?Sized>(rng: &mut G) -> Self;

    /// Lossy conversion from an `f64` constant.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("finite f64 converts to any Real")
    }

    /// Lossy view as `f64`, mainly for reporting.
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Clamp into `[0, 1]`.
    fn clamp01(self) -> Self {
        self.max(Self::zero()).min(Self::one())
    }

    /// Clamp into `[lo, hi]`.
    fn clamp_to(self, lo: Self, hi: Self) -> Self {
        self.max(lo).min(hi)
    }
}

impl Real for f32 {
    fn standard_normal<G: Rng + ?Sized>(rng: &mut G) -> Self {
        rng.sample(StandardNormal)
    }
}

impl Real for f64 {
    fn standard_normal<G: Rng + ?Sized>(rng: &mut G) -> Self {
        rng.sample(StandardNormal)
    }
}
