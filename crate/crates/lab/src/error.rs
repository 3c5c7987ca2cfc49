use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Core(#[from] vform::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("missing {what} at {path}; run `vform-lab {producer}` first")]
    MissingArtifact {
        what: &'static str,
        path: PathBuf,
        producer: &'static str,
    },
    #[error("{path} was produced under config {found}, current config is {expected}; pass --force to use it anyway")]
    HashMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },
}

impl LabError {
    pub fn io(path: &Path, source: std::io::Error) -> LabError {
        LabError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
