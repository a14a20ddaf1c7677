use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The covariance matrix of the named columns is not invertible.
    #[error("singular covariance matrix (smallest/largest eigenvalue ratio {ratio:.3e})")]
    SingularCovariance { ratio: f64 },

    /// No acceptable assignment was found within the attempt budget.
    #[error("no acceptable assignment after {attempts} attempts (best metric {best_metric}, threshold {threshold})")]
    AcceptanceTimeout {
        attempts: u64,
        best_metric: f64,
        threshold: f64,
    },

    #[error("fold construction failed: {0}")]
    Fold(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
