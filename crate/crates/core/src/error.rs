use std::path::PathBuf;

/// Coarse classification of failures, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Io,
    Internal,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Validation => 2,
            ErrorKind::Io => 3,
            ErrorKind::Internal => 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dataset: line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("dataset: line {line}: feature dimension {found}, expected {expected}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("dataset: line {line}: duplicate record id {id:?}")]
    DuplicateId { line: usize, id: String },

    #[error("dataset: line {line}: unknown class label {label:?}")]
    UnknownLabel { line: usize, label: String },

    #[error("dataset: class {class:?} has {count} records, at least 3 are needed to populate every part")]
    ClassTooSmall { class: String, count: usize },

    #[error("dataset: subclass {parent}/{tag} has no positive records")]
    NoPositives { parent: String, tag: String },

    #[error("tagmine: record {id:?} has label {label:?} outside the class list")]
    LabelOutsideClasses { id: String, label: String },

    #[error("tagmine: tag {tag:?} has an all-zero co-occurrence row")]
    ZeroRow { tag: String },

    #[error("svm: {0}")]
    Svm(String),

    #[error("prob: {0}")]
    Prob(String),

    #[error("pipeline: {0}")]
    Pipeline(String),

    #[error("pipeline: data hygiene violated: {0}")]
    Hygiene(String),

    #[error("eval: {0}")]
    Eval(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{context}: {message}")]
    Format { context: String, message: String },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::Hygiene(_) => ErrorKind::Internal,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Format {
            context: context.into(),
            message: message.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
