//! Simulation and parameter estimation for dispersion compensation in a
//! three-grating atom-beam interferometer.

pub mod cli;
pub mod error;
pub mod estimate;
pub mod fringe;
pub mod gyro;
pub mod physics;
pub mod quadrature;
pub mod waveform;

pub use error::{Error, Result};
