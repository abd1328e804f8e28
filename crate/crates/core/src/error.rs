use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibError {
    /// Input is well-formed but outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// Malformed input data. `line` is 1-based when the data came from a file.
    #[error("{}", format_error(.line, .message))]
    Format { line: Option<usize>, message: String },
    /// The fit has no unique optimum on this data (e.g. a single label class).
    #[error("degenerate fit: {0}")]
    Degenerate(String),
}

fn format_error(line: &Option<usize>, message: &str) -> String {
    match line {
        Some(l) => format!("format error at line {l}: {message}"),
        None => format!("format error: {message}"),
    }
}

impl CalibError {
    pub fn domain(msg: impl Into<String>) -> Self {
        CalibError::Domain(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        CalibError::Format { line: None, message: msg.into() }
    }

    pub fn at_line(self, line: usize) -> Self {
        match self {
            CalibError::Format { message, .. } => CalibError::Format { line: Some(line), message },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, CalibError>;
