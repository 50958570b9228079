//! Orchestration of the inversion workflows behind the `gsuq` binary.

pub mod config;
pub mod pipeline;
pub mod report;

pub use config::{Mode, RunConfig};
