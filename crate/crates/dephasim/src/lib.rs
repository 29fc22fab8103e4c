//! Qubit dephasing near a sweet spot under telegraph-fluctuator and 1/f noise.
//!
//! Internal units are nanoseconds and angular frequencies (rad/ns). Phase-like
//! control parameters (λ, noise offsets, drive amplitude) are in radians.
//! Conversions from ordinary frequencies live in [`units`].

pub mod error;
pub mod exact_tlf;
pub mod fit;
pub mod floquet;
pub mod keldysh;
pub mod linalg;
pub mod lindblad;
pub mod noise;
pub mod quad;
pub mod qubit;
pub mod rng;
pub mod series;
pub mod sse;
pub mod units;

pub use error::{Error, Result};

/// Version string embedded in every artifact.
pub const CODE_VERSION: &str = concat!("dephasim ", env!("CARGO_PKG_VERSION"));
