//! Library side of the `hunkmark` binary, so tests can drive the commands directly.

pub mod commands;
pub mod config;
