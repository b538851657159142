use std::path::Path;

/// Everything a command can fail with. Core errors keep their own kind.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] tdam_core::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Core(tdam_core::Error::Data(msg.into()))
    }

    /// 2 for usage errors, 4 for solver non-convergence, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(tdam_core::Error::Convergence(_)) => 4,
            _ => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        use tdam_core::Error as E;
        match self {
            CliError::Usage(_) => "usage",
            CliError::Format(_) => "format",
            CliError::Truncated(_) => "truncated",
            CliError::Parse(_) => "parse",
            CliError::Io { .. } => "io",
            CliError::Core(e) => match e {
                E::Shape(_) => "shape",
                E::Data(_) => "data",
                E::Degenerate(_) => "degenerate",
                E::Grad(_) => "gradient",
                E::InsufficientEvents { .. } => "insufficient_events",
                E::Undefined(_) => "undefined",
                E::Convergence(_) => "convergence",
                E::Range(_) => "range",
                E::EmptyNetwork(_) => "empty_network",
            },
        }
    }

    /// Single-line JSON record for stderr.
    pub fn json_line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string(), "exit_code": self.exit_code() })
            .to_string()
    }
}
