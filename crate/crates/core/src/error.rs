use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("signal too short: {len} samples, need at least {min}")]
    SignalTooShort { len: usize, min: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },

    #[error("unsupported WAV format in {path}: {reason}")]
    WavFormat { path: PathBuf, reason: String },

    #[error("corrupt model file: {0}")]
    ModelFormat(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Numerical failures map to their own exit code in the CLI.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::NanLoss { .. })
    }

    pub fn is_data(&self) -> bool {
        matches!(
            self,
            Error::WavFormat { .. }
                | Error::Wav(_)
                | Error::Io(_)
                | Error::ModelFormat(_)
                | Error::SignalTooShort { .. }
                | Error::Empty(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
