use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] chromalab_core::Error),

    #[error(transparent)]
    Nn(#[from] chromalab_nn::Error),

    #[error("architecture: {0}")]
    Arch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("loss became {loss} at iteration {iteration}; lower the learning rate or check the batch")]
    NonFiniteLoss { iteration: u64, loss: f64 },

    #[error("input {width}x{height} is smaller than the network minimum {min}")]
    InputTooSmall { width: usize, height: usize, min: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}
