//! Command implementations and the HTTP API behind the `learngraph` binary.

pub mod commands;
pub mod service;
