use std::path::PathBuf;

/// Errors surfaced by the toolkit. `Parse`, `Validation` and `Config` mean
/// the input is wrong; `Io` and `Training` mean a run failed at runtime.
/// The CLI maps the former group to exit code 1 and the latter to 2.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid data: {0}")]
    Validation(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("training diverged at epoch {epoch} (step size {lr:e}): objective is not finite")]
    Training { epoch: usize, lr: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input rather than a failed run.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Validation(_) | Error::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
