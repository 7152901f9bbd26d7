#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

//! Experiment runner behind the `specres` binary.

pub mod config;
pub mod experiments;
pub mod plot;
pub mod report;

use config::ConfigError;
use std::fmt;

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Numeric(specres::Error),
    Io(std::io::Error),
}

impl RunError {
    /// Process exit code: 2 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            _ => 3,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(e) => e.fmt(f),
            RunError::Numeric(e) => write!(f, "numerical error: {e}"),
            RunError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<specres::Error> for RunError {
    fn from(e: specres::Error) -> Self {
        match e {
            specres::Error::InvalidParameter(m) => RunError::Config(ConfigError::new("value", None, m)),
            specres::Error::MemoryBudget { needed, budget } => RunError::Config(ConfigError::new(
                "value",
                Some("grid"),
                format!("grid needs {needed} bytes, budget is {budget}"),
            )),
            other => RunError::Numeric(other),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}
