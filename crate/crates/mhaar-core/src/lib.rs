//! Metropolis-Hastings kernels with averaged acceptance ratios.
//!
//! The crate provides a generic involution-based MH engine, the averaged
//! kernel over N auxiliary draws, trans-dimensional moves for a change-point
//! model, Rao-Blackwellised kernels for product latent-variable models and
//! state-space models, and the exact or simulated oracles used to check them.
//!
//! All densities and ratios are handled in the log domain. A log-density of
//! −∞ means zero density and leads to rejection; NaN is always an error.

pub mod diagnostics;
pub mod error;
pub mod exchange;
pub mod latent_rb;
pub mod mh;
pub mod mhaar;
pub mod num;
pub mod rjmcmc;
pub mod rng;
pub mod ssm;
pub mod toy;

pub use error::{Error, Result};
pub use rng::{McRng, StreamKey};
