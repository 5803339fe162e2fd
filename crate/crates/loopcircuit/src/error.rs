use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("composition error: {0}")]
    Composition(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Whether the error stems from user input rather than a runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Argument(_))
    }
}
