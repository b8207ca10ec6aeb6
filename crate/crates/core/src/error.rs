use thiserror::Error;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    /// Bus numbers are 1-based.
    #[error("disconnected network: buses {buses:?} are not reachable from slack bus {slack}")]
    Disconnected { slack: usize, buses: Vec<usize> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("solver diverged at iteration {iteration}: objective is not finite (check the step size)")]
    Divergence { iteration: usize },

    #[error("measurement window is empty")]
    EmptyWindow,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stream error: {0}")]
    Stream(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical kernels rather than of the input data.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::Divergence { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
