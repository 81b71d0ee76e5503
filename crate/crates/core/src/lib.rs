//! Flow-matching generative core.
//!
//! Everything numeric lives here: stochastic-interpolant schedules, the
//! dual-stream modulated transformer with hand-written backward passes, the
//! timestep-weighted representation-alignment loss, ODE/SDE samplers with
//! classifier-free guidance, a synthetic onset-driven spectrogram corpus, and
//! desk-scale metrics (Fréchet distance, onset detection/F1).
//!
//! The crate is `no_std` + `alloc`; all IO, file formats, and the CLI live in
//! the companion `flowalign-cli` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod alignment;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod interpolant;
pub mod linalg;
pub mod network;
pub mod objective;
pub mod params;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod synthdata;
pub mod tensor;

pub use error::{CoreError, Result};
pub use scalar::Real;
pub use tensor::Tensor;
