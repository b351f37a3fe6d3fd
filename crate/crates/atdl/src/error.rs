use std::path::{Path, PathBuf};

/// Failures of the command-line layer: file access, file formats,
/// configuration, and anything raised by the core pipeline.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] atdl_core::Error),
}

impl AppError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn format(path: impl AsRef<Path>, msg: impl Into<String>) -> Self {
        AppError::Format {
            path: path.as_ref().to_path_buf(),
            msg: msg.into(),
        }
    }

    /// 2 for configuration and argument problems, 3 for unreadable or
    /// malformed data, 4 for numerical failure during training or
    /// classification.
    pub fn exit_code(&self) -> i32 {
        use atdl_core::Error as E;
        match self {
            AppError::Config(_) => 2,
            AppError::Io { .. } | AppError::Format { .. } => 3,
            AppError::Core(e) => match e {
                E::InvalidArgument(_) => 2,
                E::Shape { .. } | E::InvalidData(_) | E::MissingClass { .. } => 3,
                E::Divergence { .. } | E::Singular { .. } | E::UndefinedCorrelation | E::NoConvergence { .. } => 4,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, AppError>;
