//! Numerical model of vibrational-state control in a 1-D tilted-washboard
//! optical lattice: plane-wave band structure, displacement-pulse coupling
//! probabilities and their optimization, Landau-Zener lifetimes under the
//! gravitational tilt, harmonic-oscillator reference results, and pulse-echo
//! simulation over an inhomogeneous ensemble of lattice depths.

pub mod config;
pub mod coupling;
pub mod echo;
pub mod error;
pub mod fit;
pub mod harmonic;
pub mod lattice;
pub mod output;
pub mod pulse;

pub use error::{Error, Result};
