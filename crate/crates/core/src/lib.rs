//! Feedback solvers, particle simulation and convergence studies for
//! linear-quadratic mean field control with non-convex coupling and common noise.

pub mod cli;
pub mod config;
pub mod convergence;
pub mod error;
pub mod feedback;
pub mod fields;
pub mod model;
pub mod riccati;
pub mod sim;

pub use error::{Error, Result};
