use std::fmt;
use std::process::ExitCode;

use sigil_core::SigilError;

/// Process exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    CheckFailed = 1,
    Usage = 2,
    Io = 3,
}

impl From<Exit> for ExitCode {
    fn from(e: Exit) -> Self {
        ExitCode::from(e as u8)
    }
}

#[derive(Debug)]
pub struct CliError {
    pub exit: Exit,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { exit: Exit::Usage, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { exit: Exit::Io, message: message.into() }
    }

    pub fn check(message: impl Into<String>) -> Self {
        Self { exit: Exit::CheckFailed, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<SigilError> for CliError {
    fn from(e: SigilError) -> Self {
        use SigilError::*;
        let exit = match &e {
            Io { .. } | Parse { .. } | NodeOutOfRange { .. } | FeatureRows { .. } | Checkpoint(_) => Exit::Io,
            InvalidConfig(_) | InsufficientNodes { .. } | Metric(_) | ShapeMismatch { .. } | SingleCluster => Exit::Usage,
            // Numerical failures during a run.
            _ => Exit::CheckFailed,
        };
        Self { exit, message: e.to_string() }
    }
}

pub type CliResult<T> = Result<T, CliError>;
