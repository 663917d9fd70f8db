//! Library half of the command-line tool: run configuration, CSV ingestion,
//! artifact formats, and the subcommand implementations. The binary in
//! main.rs is only argument parsing and exit-code mapping over this.

pub mod commands;
pub mod config;
pub mod dataio;
pub mod errors;
pub mod formats;
