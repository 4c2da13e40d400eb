//! Error types shared across the library.

use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum SimError {
    /// A configuration value violates its documented invariant.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// The photon-number cutoff cannot represent the requested object to the
    /// required accuracy (norm loss above tolerance, unitarity defect, ...).
    #[error("truncation: {0}")]
    Truncation(String),

    /// A sampling or integration grid captures too little probability.
    #[error("grid too narrow: captured probability {captured} < {required}")]
    GridTooNarrow { captured: f64, required: f64 },

    /// Doubling the quadrature resolution still moves the result beyond tolerance.
    #[error("quadrature not converged: {0}")]
    QuadratureNotConverged(String),

    /// Restarted minimizations disagree beyond tolerance.
    #[error("optimization did not converge: {0}")]
    OptimizationDidNotConverge(String),

    /// A least-squares fit has too little data or degenerate coverage.
    #[error("degenerate fit: {0}")]
    FitDegenerate(String),

    /// A serialized operator or record file does not match the documented schema.
    #[error("file format: {0}")]
    FileFormat(String),

    /// A lookup-table range does not cover the requested signal.
    #[error("range too narrow: {0}")]
    RangeTooNarrow(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
