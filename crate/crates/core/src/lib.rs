//! Broadband chirp excitation: pulse-sequence design, Bloch-equation
//! simulation over resonance offsets, and analytic phase-dispersion
//! predictions checked against numerics.

pub mod analysis;
pub mod checks;
pub mod config;
pub mod error;
pub mod propagator;
pub mod rotations;
pub mod waveform;

pub use error::{Error, Result};
