//! Simulation and finite-key analysis of a four-dimensional path-encoded
//! decoy-state BB84 link over multicore fiber with phase-locked receiver
//! interferometers.

// Negated comparisons are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod cli;
pub mod config;
pub mod error;
pub mod exec;
pub mod keyrate;
pub mod linksim;
pub mod reference;
pub mod stabilizer;
pub mod states;

pub use error::{Error, Result};
pub use exec::Execution;
