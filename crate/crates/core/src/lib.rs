//! Distributed fault detection and isolation for networks of LTI agents.
//!
//! Each agent runs an observer of its own state and its neighbors' states,
//! driven only by relative outputs. Observer gains come from an H2/H- mixed
//! design solved by a built-in SDP solver; residuals are evaluated with a
//! sliding RMS and compared against Monte Carlo thresholds to isolate faults.

pub mod cli;
pub mod fdi_evaluation;
pub mod matrix_equations;
pub mod network_model;
pub mod simulation;
pub mod synthesis;
