//! Simulation and estimation for longitudinal causal models with a
//! time-varying birth process as mediator.

pub mod error;
pub mod estimands;
pub mod estimators;
pub mod intervention;
pub mod numeric;
pub mod rng;
pub mod scenario;
pub mod scm;

pub use error::{Error, Result};
