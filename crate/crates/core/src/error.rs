use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular conditional covariance on [{from}, {to}]: likelihood-ratio weight undefined")]
    SingularCovariance { from: f64, to: f64 },

    #[error("swap sensitivity matrix at rebalance date t={date} is singular or ill-conditioned (cond={cond:.3e})")]
    SingularHedgeMatrix { date: f64, cond: f64 },

    #[error("real-world calibration failed at dimension {dimension}: radicand {radicand:.3e} is not positive")]
    Calibration { dimension: usize, radicand: f64 },

    #[error("sample size mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },

    #[error("pricing failed at grid node {node} (date index {date_index}): {source}")]
    NodePricing {
        node: usize,
        date_index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("grid-table file: {0}")]
    GridFormat(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures of the numerics (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::SingularCovariance { .. }
            | Error::SingularHedgeMatrix { .. }
            | Error::Calibration { .. } => true,
            Error::NodePricing { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
