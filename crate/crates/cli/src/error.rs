use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Parse {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("unknown column `{name}`; available columns: {available}")]
    UnknownColumn { name: String, available: String },

    #[error("{}: {source}", path.display())]
    Log {
        path: PathBuf,
        source: mi_lab::Error,
    },

    #[error(transparent)]
    Core(mi_lab::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Plot(String),
}

impl From<mi_lab::Error> for CliError {
    fn from(e: mi_lab::Error) -> Self {
        match e {
            mi_lab::Error::Config(msg) | mi_lab::Error::InvalidCritic(msg) => Self::Validation(msg),
            other => Self::Core(other),
        }
    }
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for anything the user can fix in their input.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Parse { .. } | Self::Validation(_) | Self::UnknownColumn { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
