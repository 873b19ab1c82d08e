use std::path::Path;

use kantab_core::Error;
use thiserror::Error as ThisError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_GUARD: i32 = 4;
pub const EXIT_COVERING: i32 = 5;
/// Refinement stopped on its iteration budget before becoming deterministic.
pub const EXIT_BUDGET: i32 = 10;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("size guard: {0}")]
    Guard(String),
    #[error("covering violation: {0}")]
    Covering(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Parse(_) => EXIT_PARSE,
            Self::Validation(_) => EXIT_VALIDATION,
            Self::Guard(_) => EXIT_GUARD,
            Self::Covering(_) => EXIT_COVERING,
            Self::Io(_) | Self::Other(_) => EXIT_OTHER,
        }
    }

    pub fn in_file(self, path: &Path) -> Self {
        let at = |m: String| format!("{}: {m}", path.display());
        match self {
            Self::Parse(m) => Self::Parse(at(m)),
            Self::Validation(m) => Self::Validation(at(m)),
            other => other,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e.root() {
            Error::SizeGuard { .. } => Self::Guard(msg),
            Error::Covering { .. } => Self::Covering(msg),
            Error::InvalidSymbol { .. }
            | Error::Shape(_)
            | Error::InvalidChain(_)
            | Error::AlphabetMismatch
            | Error::InvalidSystem(_)
            | Error::NonStochasticRow { .. }
            | Error::InvalidPartition(_)
            | Error::MassMismatch(_) => Self::Validation(msg),
            _ => Self::Other(msg),
        }
    }
}
