use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("state error: {0}")]
    State(String),

    #[error("format error in {path}: {kind}")]
    Format { path: PathBuf, kind: FormatError },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Distinct failure codes for the binary file formats.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected \"{}\", found \"{}\"", .expected.escape_ascii(), .found.escape_ascii())]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("trailing bytes: expected {expected} bytes, found {actual}")]
    TrailingBytes { expected: u64, actual: u64 },
    #[error("non-finite value in record {record}")]
    NonFinite { record: u64 },
    #[error("invalid attribute byte {value} in record {record}")]
    InvalidAttribute { record: u64, value: u8 },
    #[error("declared payload of {requested} bytes exceeds cap of {cap} bytes")]
    TooLarge { requested: u64, cap: u64 },
    #[error("malformed line {line}: {message}")]
    Malformed { line: usize, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, kind: FormatError) -> Self {
        Error::Format {
            path: path.into(),
            kind,
        }
    }

    /// Short machine-readable tag for the error class.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Validation(_) => "validation",
            Error::Numeric(_) => "numeric",
            Error::State(_) => "state",
            Error::Format { kind, .. } => match kind {
                FormatError::BadMagic { .. } => "bad_magic",
                FormatError::VersionMismatch { .. } => "version_mismatch",
                FormatError::Truncated { .. } => "truncated",
                FormatError::TrailingBytes { .. } => "trailing_bytes",
                FormatError::NonFinite { .. } => "non_finite",
                FormatError::InvalidAttribute { .. } => "invalid_attribute",
                FormatError::TooLarge { .. } => "too_large",
                FormatError::Malformed { .. } => "malformed",
            },
            Error::Io { .. } => "io",
        }
    }
}
