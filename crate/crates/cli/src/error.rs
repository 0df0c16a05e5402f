//! Error type of the command-line layer.

use melstyle_core::CoreError;
use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Config-file problem, with the 1-based line it was found on
    /// (line 0 when the problem is not tied to a single line).
    Config { line: usize, message: String },
    /// I/O failure, with the path or operation that failed.
    Io { context: String, source: std::io::Error },
    /// Checkpoint corruption: checksum mismatch, malformed header,
    /// or header/body disagreement.
    Integrity { context: String },
    /// Command issued against a state that cannot serve it.
    State { context: String },
    /// Bad command line.
    Usage { context: String },
    Core(CoreError),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config { line: 0, message } => write!(f, "config: {message}"),
            CliError::Config { line, message } => write!(f, "config line {line}: {message}"),
            CliError::Io { context, source } => write!(f, "io: {context}: {source}"),
            CliError::Integrity { context } => write!(f, "checkpoint integrity: {context}"),
            CliError::State { context } => write!(f, "state: {context}"),
            CliError::Usage { context } => write!(f, "usage: {context}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            CliError::Io { source, .. } => Some(source),
            CliError::Core(e) => Some(e),
            _ => None,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

/// Wraps an I/O result with the path or operation it belongs to.
pub fn io_ctx<T>(r: std::io::Result<T>, context: &str) -> Result<T> {
    r.map_err(|source| CliError::Io { context: context.to_string(), source })
}
