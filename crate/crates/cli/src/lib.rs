//! Command-line entry points and the annotation HTTP service.

pub mod commands;
pub mod service;

pub use commands::{run, Cli};
