use std::fmt;
use std::path::Path;

use asft_core::error::CoreError;

/// Exit status for a successful run.
pub const EXIT_OK: i32 = 0;
/// Bad flags, bad config, missing or malformed inputs.
pub const EXIT_USAGE: i32 = 2;
/// Training divergence, failed subspace build, ill-conditioned surrogate.
pub const EXIT_NUMERIC: i32 = 3;

/// A failure carrying the process exit code it maps to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::usage(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        let numeric = matches!(
            err,
            CoreError::Training { .. }
                | CoreError::Numeric { .. }
                | CoreError::NumericOverflow { .. }
                | CoreError::Build { .. }
                | CoreError::Conditioning(_)
                | CoreError::DegenerateSpectrum(_)
        );
        if numeric {
            Self::numeric(err.to_string())
        } else {
            Self::usage(err.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
