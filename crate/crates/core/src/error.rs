use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("format error: {0}")]
    Format(String),
    /// `line` is 1-based and counts the header.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("config error: {0}")]
    Config(String),
    /// A caller broke a precondition the type system cannot express.
    #[error("contract error: {0}")]
    Contract(String),
    #[error("metric undefined: {0}")]
    MetricUndefined(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged {
        epoch: usize,
        batch: usize,
        last_good: Box<crate::encoder::Encoder>,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Numerical failures map to exit code 1 in the CLI, everything else to 2.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_) | Error::Diverged { .. } | Error::MetricUndefined(_)
        )
    }
}
