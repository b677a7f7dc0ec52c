use std::fmt;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("sentence {id}: {kind}")]
    Validation { id: String, kind: ValidationKind },
    #[error("sequence of length {len} exceeds max_len {max}")]
    LengthOverflow { len: usize, max: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("infeasible generator spec: {0}")]
    Infeasible(String),
    #[error("ontology has no type with positive frequency")]
    EmptyOntology,
    #[error("type name {0:?} contains a reserved delimiter")]
    ReservedDelimiter(String),
    #[error("empty mention surface")]
    EmptySurface,
    #[error("token id {id} out of range for a vocabulary of {size}")]
    TokenOutOfRange { id: usize, size: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("gold and predicted sentence ids differ: {0}")]
    MismatchedIds(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(id: &str, kind: ValidationKind) -> Self {
        Error::Validation {
            id: id.to_string(),
            kind,
        }
    }
}

/// Reasons a corpus record is rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationKind {
    SpanOutOfRange { start: usize, end: usize, tokens: usize },
    EmptySpan { start: usize, end: usize },
    OverlappingSpans { first: (usize, usize), second: (usize, usize) },
    SurfaceMismatch { expected: String, found: String },
    EmptyType,
    ReservedType(String),
    DuplicateId,
}

impl fmt::Display for ValidationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationKind::SpanOutOfRange { start, end, tokens } => {
                write!(f, "span [{start},{end}) out of range for {tokens} tokens")
            }
            ValidationKind::EmptySpan { start, end } => write!(f, "empty span [{start},{end})"),
            ValidationKind::OverlappingSpans { first, second } => write!(
                f,
                "overlapping spans [{},{}) and [{},{})",
                first.0, first.1, second.0, second.1
            ),
            ValidationKind::SurfaceMismatch { expected, found } => {
                write!(f, "mention {found:?} does not match span text {expected:?}")
            }
            ValidationKind::EmptyType => write!(f, "empty entity type"),
            ValidationKind::ReservedType(t) => write!(f, "type {t:?} contains '<' or '>'"),
            ValidationKind::DuplicateId => write!(f, "duplicate sentence id"),
        }
    }
}
