//! CLI error taxonomy mapped onto the process exit codes.

use std::path::PathBuf;

/// Exit codes: 2 for I/O and parse failures, 3 for domain invariant
/// violations, 4 for internal faults. 0 is success.
#[derive(Debug)]
pub enum CliError {
    Io { path: PathBuf, message: String },
    Parse { path: PathBuf, message: String },
    Domain(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Parse { .. } => 2,
            CliError::Domain(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Io { path, message } => write!(f, "{}: {message}", path.display()),
            CliError::Parse { path, message } => write!(f, "{}: {message}", path.display()),
            CliError::Domain(message) => write!(f, "{message}"),
            CliError::Internal(message) => write!(f, "internal error: {message}"),
        }
    }
}

impl std::error::Error for CliError {}
