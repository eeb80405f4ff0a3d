//! Command implementations behind the `corank` binary.

pub mod commands;
pub mod config;
