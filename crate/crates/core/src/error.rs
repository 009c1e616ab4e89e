use std::path::PathBuf;

/// Errors raised anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("pattern {pattern:?} must contain the slot {slot} exactly once")]
    Slot { pattern: String, slot: &'static str },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("patch ({row}, {col}) is not covered by any window")]
    Coverage { row: usize, col: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("encoding prompt {prompt:?} failed: {source}")]
    Prompt {
        prompt: String,
        #[source]
        source: Box<Error>,
    },

    #[error("prompt {prompt:?} needs {tokens} tokens but the context holds {limit}")]
    TokenOverflow {
        prompt: String,
        tokens: usize,
        limit: usize,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("dataset manifest: {0}")]
    Manifest(String),

    #[error("onnx: {0}")]
    Onnx(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Slot { .. } => "slot",
            Error::Contract(_) => "contract",
            Error::Coverage { .. } => "coverage",
            Error::Config(_) => "config",
            Error::Prompt { .. } => "prompt",
            Error::TokenOverflow { .. } => "token_overflow",
            Error::Degenerate(_) => "degenerate_input",
            Error::Manifest(_) => "manifest",
            Error::Onnx(_) => "onnx",
            Error::Io { .. } => "io",
            Error::Image(_) => "image",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

macro_rules! contract {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use contract;
