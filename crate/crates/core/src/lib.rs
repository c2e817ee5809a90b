//! Simulation and analysis of a heralded photon / atomic-memory Bell test.
//!
//! The crate is organised along the experiment's data flow:
//!
//! - [`model`]: Raman branching weights, the mixing angle η, the two-qubit
//!   polarization density matrix and its Born-rule statistics.
//! - [`decoherence`]: inhomogeneous Zeeman dephasing during storage and the
//!   resulting retrieval and g12 decay.
//! - [`scheduler`]: the write/read trial sequence with the conditional
//!   memory-start latch, as an explicit state machine.
//! - [`simulator`]: Monte Carlo event generation into an [`eventlog::EventLog`].
//! - [`analysis`]: coincidence counting, E, CHSH S, g12 and the model fits.

pub mod analysis;
pub mod config;
pub mod decoherence;
mod error;
pub mod eventlog;
pub mod model;
pub mod rng;
pub mod scheduler;
pub mod simulator;

pub use error::{Error, Result};
