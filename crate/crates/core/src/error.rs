use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report. Messages carry the module prefix so
/// the CLI can surface them verbatim.
#[derive(Debug, Error)]
pub enum Error {
    #[error("ingest: unsupported capture format (magic {magic:#010x})")]
    UnsupportedFormat { magic: u32 },
    #[error("ingest: unsupported link type {0}")]
    UnsupportedLinkType(u32),
    #[error("ingest: truncated capture at byte offset {offset}")]
    TruncatedCapture { offset: u64 },
    #[error("ingest: decode error at offset {offset}: {reason}")]
    Decode { offset: usize, reason: String },
    #[error("ingest: truncated frame ({have} of {need} bytes)")]
    TruncatedFrame { have: usize, need: usize },

    #[error("{module}: invalid argument: {msg}")]
    InvalidArgument { module: &'static str, msg: String },
    #[error("{module}: config error: {msg}")]
    Config { module: &'static str, msg: String },
    #[error("partitioning: class {class:?} has {count} rows, at least 3 are required to stratify")]
    Stratification { class: String, count: usize },
    #[error("{module}: leakage error: {msg}")]
    Leakage { module: &'static str, msg: String },
    #[error("lineage error: {0}")]
    Lineage(String),
    #[error("transforms: transform mismatch: {0}")]
    TransformMismatch(String),
    #[error("transforms: value error: {0}")]
    Value(String),
    #[error("models: fit error: {0}")]
    Fit(String),
    #[error("{module}: shape error: {msg}")]
    Shape { module: &'static str, msg: String },
    #[error("evaluation: undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("explainability: unsupported model: {0}")]
    UnsupportedModel(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(module: &'static str, msg: impl Into<String>) -> Self {
        Error::Config { module, msg: msg.into() }
    }

    pub(crate) fn invalid(module: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument { module, msg: msg.into() }
    }

    pub(crate) fn leakage(module: &'static str, msg: impl Into<String>) -> Self {
        Error::Leakage { module, msg: msg.into() }
    }

    pub(crate) fn shape(module: &'static str, msg: impl Into<String>) -> Self {
        Error::Shape { module, msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by a bad request (configuration, arguments,
    /// leakage or lineage guards) rather than by the data itself.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument { .. }
                | Error::Config { .. }
                | Error::Leakage { .. }
                | Error::Lineage(_)
                | Error::TransformMismatch(_)
                | Error::UnsupportedModel(_)
                | Error::Stratification { .. }
        )
    }
}
