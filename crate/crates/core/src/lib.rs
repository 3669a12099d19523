//! Critical points of random Fourier series on the flat torus.
//!
//! The crate samples the rescaled random series `F(θ)` with a radial spectral
//! weight, enumerates its critical points, and computes the Kac-Rice densities
//! and constants that describe the mean and variance of critical-point counts.

pub mod ampleness;
pub mod amplitude;
pub mod config;
pub mod covariance;
pub mod critical;
pub mod error;
pub mod experiments;
pub mod gaussian;
pub mod kac_rice;
pub mod rng;
pub mod sampler;
pub mod special;

/// Largest supported torus dimension.
pub const MAX_DIM: usize = 3;

pub use amplitude::Amplitude;
pub use error::{Error, Result};
