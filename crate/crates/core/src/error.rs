use thiserror::Error;

use crate::blackboard::SubmissionId;

/// Errors raised by the testbed's operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown target submission {0}")]
    UnknownTarget(SubmissionId),
    #[error("reproduction target {0} is not a New submission")]
    TargetNotNew(SubmissionId),
    #[error("agent may not reproduce its own submission {0}")]
    ForbiddenSelfReproduction(SubmissionId),
    #[error("reproduction config does not match target {0}")]
    ConditionMismatch(SubmissionId),
    #[error("submission {0} is not a reproduction")]
    InvalidKind(SubmissionId),
    #[error("reproduction {0} already judged")]
    AlreadyJudged(SubmissionId),
    #[error("invalid params: {0}")]
    InvalidParams(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("corrupt log: {0}")]
    CorruptLog(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
