use std::io;
use std::path::PathBuf;

use crate::dataio::FeatureError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] mdat_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Feature { path: PathBuf, source: FeatureError },
    #[error("{}:{line}: {message}", path.display())]
    Manifest { path: PathBuf, line: usize, message: String },
    #[error("{}:{line}: label {label:?} is not in the vocabulary {vocabulary:?}", path.display())]
    UnknownLabel {
        path: PathBuf,
        line: usize,
        label: String,
        vocabulary: Vec<String>,
    },
    #[error("{}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },
    #[error("vocabulary mismatch: model has {model:?}, data has {data:?}")]
    VocabularyMismatch { model: Vec<String>, data: Vec<String> },
    #[error("dataset {name}: {message}")]
    Dataset { name: String, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("gradient check failed for {model}: max relative error {error:e} exceeds {tolerance:e}")]
    GradientCheck { model: String, error: f64, tolerance: f64 },
    #[error("report output: {0}")]
    Report(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}
