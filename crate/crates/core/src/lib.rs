//! Student's t filtering and smoothing for linear state-space models.
//!
//! Alongside the t filter and smoother the crate provides Kalman/RTS
//! baselines, a point-mass oracle for scalar models, KLD calibration of the
//! scale adjustments, a Monte Carlo t filter for nonlinear models, and the
//! simulation benchmarks used to compare them.

pub mod bench;
pub mod calibration;
pub mod distributions;
pub mod error;
pub mod gaussian;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod quadrature;
pub mod rng;
pub mod student;

pub use error::{Error, Result};
