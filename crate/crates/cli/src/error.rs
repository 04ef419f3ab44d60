use std::path::{Path, PathBuf};

use lobtrend::book::BookError;
use lobtrend::datagen::SynthError;
use lobtrend::features::FeatureError;
use lobtrend::labels::LabelError;
use lobtrend_nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing {what} at {}; run `{hint}` first", path.display())]
    MissingInput {
        what: &'static str,
        path: PathBuf,
        hint: &'static str,
    },
    #[error("statistics leak: {0}")]
    Leak(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Book(#[from] BookError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error("{cell}: {source}")]
    Cell { cell: String, source: NnError },
    #[error(transparent)]
    Nn(#[from] NnError),
}

impl CliError {
    /// Process exit code: 2 for bad configuration, 3 for missing upstream
    /// artifacts, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingInput { .. } => 3,
            _ => 1,
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn parse(path: &Path, message: impl ToString) -> CliError {
        CliError::Parse {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
