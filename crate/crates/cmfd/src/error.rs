use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    /// A file whose bytes do not follow the expected format.
    #[error("format error: {0}")]
    Format(String),
    /// A configuration key or value that cannot be applied.
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] cmfd_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
