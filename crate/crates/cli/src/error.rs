//! Exit-code contract.
//!
//! | code | meaning                         |
//! |------|---------------------------------|
//! | 0    | success / drift PASS            |
//! | 2    | validation or configuration     |
//! | 3    | drift WARNING                   |
//! | 4    | drift FAIL                      |
//! | 5    | runtime abort                   |

use std::fmt;

use annokit::aggregation::AggregationError;
use annokit::governance::GovernanceError;
use annokit::orchestrator::OrchestratorError;
use annokit::workspace::WorkspaceError;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DRIFT_WARNING: u8 = 3;
pub const EXIT_DRIFT_FAIL: u8 = 4;
pub const EXIT_ABORT: u8 = 5;

/// A failed command: the error plus the exit code it maps to.
#[derive(Debug)]
pub struct CmdError {
    pub code: u8,
    pub error: anyhow::Error,
}

impl CmdError {
    pub fn config(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_CONFIG, error: error.into() }
    }

    pub fn abort(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_ABORT, error: error.into() }
    }

    pub fn config_msg(msg: impl fmt::Display) -> Self {
        Self::config(anyhow::anyhow!("{msg}"))
    }

    pub fn context(self, what: impl fmt::Display) -> Self {
        Self { code: self.code, error: self.error.context(what.to_string()) }
    }
}

impl fmt::Display for CmdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<WorkspaceError> for CmdError {
    fn from(e: WorkspaceError) -> Self {
        Self::config(e)
    }
}

impl From<OrchestratorError> for CmdError {
    fn from(e: OrchestratorError) -> Self {
        match e {
            OrchestratorError::Io { .. } | OrchestratorError::AbortedRun { .. } | OrchestratorError::CorruptLog { .. } => Self::abort(e),
            _ => Self::config(e),
        }
    }
}

impl From<AggregationError> for CmdError {
    fn from(e: AggregationError) -> Self {
        match e {
            AggregationError::Io { .. } | AggregationError::NonFinite => Self::abort(e),
            _ => Self::config(e),
        }
    }
}

impl From<GovernanceError> for CmdError {
    fn from(e: GovernanceError) -> Self {
        match e {
            GovernanceError::Io { .. } => Self::abort(e),
            _ => Self::config(e),
        }
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        Self::abort(e)
    }
}

pub type CmdResult<T> = Result<T, CmdError>;
