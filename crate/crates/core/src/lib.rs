//! Fault-tolerant funnel control for linear systems with redundant actuators.
//!
//! The crate builds the time-varying normal form of an uncertain linear
//! system whose input matrix is scaled by per-actuator reliability signals,
//! synthesizes a controller weight matrix that routes effort across the
//! redundant actuators, and runs a funnel-gain output-error cascade in closed
//! loop under injected faults, with an adaptive Dormand-Prince integrator
//! that respects the funnel constraint during trial steps.

pub mod controller;
pub mod error;
pub mod normalform;
pub mod numkit;
pub mod plant;
pub mod scenario;
pub mod simulator;
pub mod synth;

pub use error::{Error, Result};
pub use numkit::{MatJet, ScalarJet};
pub use scenario::{Scenario, SummaryReport};

// Re-export the linear-algebra backend so downstream crates use one version.
pub use nalgebra;
