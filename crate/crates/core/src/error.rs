use std::fmt;

/// Library-wide error type.
///
/// Variants map one-to-one onto the failure categories the operations
/// promise: shape/channel mismatches, invalid arguments, violated call
/// contracts, file-format problems, and parse errors with line numbers.
#[derive(Debug)]
pub enum Error {
    /// Incompatible shapes or channel counts; the message names both sides.
    Dimension(String),
    /// A value-level precondition failed (negative variance, even kernel, ...).
    Argument(String),
    /// An API contract was violated (double normalization, non-scalar root, ...).
    Contract(String),
    /// Backward was requested through an op with no registered rule.
    UnsupportedOp(String),
    /// Structured-text parse failure with a 1-based line number.
    Parse { line: usize, message: String },
    /// Binary tensor file failed validation.
    Format(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(m) => write!(f, "dimension error: {m}"),
            Error::Argument(m) => write!(f, "argument error: {m}"),
            Error::Contract(m) => write!(f, "contract error: {m}"),
            Error::UnsupportedOp(m) => write!(f, "unsupported op: {m}"),
            Error::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dimension(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}

pub(crate) fn argument(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
