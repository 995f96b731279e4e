use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("duplicate record id `{0}`")]
    DuplicateId(String),

    #[error("sequence is empty after cleaning")]
    EmptySequence,

    #[error("missing column `{0}`")]
    Schema(String),

    #[error("invalid value at row {row}: {message}")]
    Value { row: usize, message: String },

    #[error("cannot stratify: class {label} has {count} member(s), need at least 2")]
    Stratification { label: u8, count: usize },

    #[error("sequence of length {len} is shorter than k = {k}")]
    ShortSequence { len: usize, k: usize },

    #[error("sequence has no A/C/G/T bases")]
    DegenerateSequence,

    #[error("record `{id}`: {source}")]
    Record {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("training labels contain a single class")]
    SingleClass,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid architecture: {0}")]
    Architecture(String),

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("run {run} failed: {source}")]
    Run {
        run: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("invalid model file: {0}")]
    Model(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_file(path: impl Into<PathBuf>, source: Error) -> Self {
        Error::InFile {
            path: path.into(),
            source: Box::new(source),
        }
    }

    pub(crate) fn for_record(id: &str, source: Error) -> Self {
        Error::Record {
            id: id.to_string(),
            source: Box::new(source),
        }
    }

    pub(crate) fn stage(stage: &'static str, source: Error) -> Self {
        Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    /// Innermost error once file/record/stage context is peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Record { source, .. }
            | Error::Stage { source, .. }
            | Error::Run { source, .. }
            | Error::InFile { source, .. } => source.root(),
            other => other,
        }
    }
}
