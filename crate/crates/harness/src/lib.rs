//! File formats and command implementations behind the `muscle-rl` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod output;
