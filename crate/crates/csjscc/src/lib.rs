//! File formats, training loop, evaluation, sweeps and the command line
//! for the `csjscc-core` transmission pipeline.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
mod error;
pub mod eval;
pub mod selftest;
pub mod sweep;
pub mod trainer;

pub use crate::error::{Error, Result};
