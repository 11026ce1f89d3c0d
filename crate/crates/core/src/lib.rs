//! Time-varying spectral density estimation for non-stationary series.

pub mod baselines;
pub mod basis;
pub mod cli;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod generators;
pub mod io;
pub mod metrics;
pub mod partition;
pub mod sampler;
pub mod spectral;

pub use error::{Error, Result};
