use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Variants are grouped so the command line can map them onto exit codes:
/// configuration problems, data/format problems, and runtime failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("unknown channel name: {0}")]
    Name(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("out of bounds: {0}")]
    Bounds(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid label: {0}")]
    Label(String),
    #[error("stratification error: {0}")]
    Stratification(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("mapping error at tick {tick}: class {class} has no motion command")]
    Mapping { tick: usize, class: i64 },
    #[error("training aborted: {0}")]
    Training(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }

    /// Process exit code for the command line: 2 config, 3 data/format, 4 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parameter(_) => 2,
            Error::Training(_) | Error::Contract(_) | Error::Io { .. } => 4,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
