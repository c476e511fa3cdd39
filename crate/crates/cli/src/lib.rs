//! Library side of the `nlc-admm` command-line runner: configuration,
//! experiment execution, CSV and metadata output, scaling studies and the
//! invariant suite.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiment;
pub mod output;
pub mod scaling;
pub mod verify;

use nlc_admm::error::{FormatError, ReferenceError, SolveError, ZooError};

/// Build tag from `git describe`, or `unknown` outside a checkout.
pub const BUILD_TAG: &str = env!("NLC_ADMM_BUILD_TAG");

/// Environment variable naming the reference cache directory.
pub const CACHE_ENV: &str = "NLC_ADMM_CACHE";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("solver: {0}")]
    Solve(#[from] SolveError),
    #[error("reference: {0}")]
    Reference(#[from] ReferenceError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 1 for configuration and I/O problems, 2 for solver failures, 3 for
    /// reference failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Solve(_) => 2,
            CliError::Reference(_) => 3,
        }
    }
}

impl From<ZooError> for CliError {
    fn from(e: ZooError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Config(e.to_string())
    }
}
