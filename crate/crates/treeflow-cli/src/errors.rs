//! CLI failure classification. The process exit code encodes the class:
//! 0 ok, 1 usage (arguments or config contents), 2 data (datasets and
//! on-disk artifacts), 3 runtime (training, enumeration, IO while writing),
//! 4 a verification threshold was exceeded.

use std::fmt;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Runtime(String),
    Threshold(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Threshold(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage: {msg}"),
            CliError::Data(msg) => write!(f, "data: {msg}"),
            CliError::Runtime(msg) => write!(f, "runtime: {msg}"),
            CliError::Threshold(msg) => write!(f, "threshold: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

pub fn usage(e: impl fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

pub fn data(e: impl fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

pub fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}
