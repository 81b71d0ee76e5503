//! Scalar abstraction so the same model code runs in f32 (training, sampling)
//! and f64 (finite-difference gradient verification).

use num_traits::Float;

/// Floating-point scalar used throughout the numeric code.
pub trait Real:
    Float + num_traits::NumAssign + core::fmt::Debug + core::fmt::Display + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    fn from_usize(n: usize) -> Self {
        Self::from_f64(n as f64)
    }

    fn sigmoid(self) -> Self {
        Self::one() / (Self::one() + (-self).exp())
    }

    /// x * sigmoid(x).
    fn silu(self) -> Self {
        self * self.sigmoid()
    }
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}
