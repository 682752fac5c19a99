//! Command-line front end: configuration, stage commands, sweeps and
//! end-to-end runs.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

pub use commands::run;
