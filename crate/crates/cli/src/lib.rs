//! Front end for parameter sweeps over the dense-nematic energy: phase
//! diagrams, equation-of-state tables, isotropic stability maps and a
//! self-check suite.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod check;
pub mod cli;
pub mod config;
pub mod svg;
pub mod tables;

use std::fmt;

/// Exit code for numerical failures (non-convergence, I/O).
pub const EXIT_NUMERICAL: i32 = 1;
/// Exit code for invalid input or domain violations.
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<densenematic::Error> for CliError {
    fn from(e: densenematic::Error) -> Self {
        match e {
            densenematic::Error::NonConvergence { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Numerical(format!("i/o error: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Numerical(format!("csv error: {e}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
