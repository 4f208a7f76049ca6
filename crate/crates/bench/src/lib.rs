//! Desk-scale experiments for the gapwave engine: accuracy against an
//! uncoupled reference, time against error, spike shifts, iteration counts
//! and worker scaling.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod output;

pub use experiments::{evaluate, max_error, reference_run, run_experiment, ErrorReport, ExperimentKind, ExperimentSpec};
