use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {cause}", path.display())]
    Io { path: PathBuf, cause: std::io::Error },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("{}: {cause}", path.display())]
    Json { path: PathBuf, cause: serde_json::Error },
    #[error("{}: {cause}", path.display())]
    Csv { path: PathBuf, cause: csv::Error },
    #[error(transparent)]
    Core(#[from] mkdt_core::Error),
    #[error("{0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |cause| Error::Io { path: path.to_path_buf(), cause }
}

pub(crate) fn json(path: &Path) -> impl FnOnce(serde_json::Error) -> Error + '_ {
    move |cause| Error::Json { path: path.to_path_buf(), cause }
}

pub(crate) fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |cause| Error::Csv { path: path.to_path_buf(), cause }
}

pub(crate) fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), message: message.into() }
}
