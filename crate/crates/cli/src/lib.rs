//! Batch entry points tying the library modules into reproducible
//! experiments. Every subcommand is a thin wrapper over `splatrig` calls, so
//! scripted library use and CLI use produce identical artifacts.

pub mod cli;
pub mod commands;
pub mod config;
pub mod manifest;
pub mod util;
