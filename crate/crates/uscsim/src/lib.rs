//! Simulation of a flux qubit ultrastrongly coupled to an LC cavity, read
//! out through a driven nonlinear (Kerr) resonator under photon loss.

pub mod analysis;
pub mod dynamics;
pub mod measurement;
pub mod metrics;
pub mod error;
pub mod models;
pub mod exec;
pub mod scenario;
pub mod sparse;
pub mod tensor;

pub use error::{Error, Result};
