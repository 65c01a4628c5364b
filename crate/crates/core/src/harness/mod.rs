//! Configuration, checkpoints, CSV output and the command-line front end.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod metrics;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
