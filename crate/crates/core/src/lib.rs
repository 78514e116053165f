//! Stochastic hydrostatic Euler and Navier-Stokes on the 2D torus.

pub mod error;
pub mod experiments;
pub mod fields;
pub mod norms;
pub mod regularize;
pub mod dynamics;
pub mod spectral;
pub mod stochastic;

pub use error::{Error, Result};
