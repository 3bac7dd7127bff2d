use thiserror::Error;

/// Errors produced by the library.
#[derive(Error, Debug)]
pub enum Error {
    /// A required column or schema element is missing or malformed.
    #[error("schema error: {0}")]
    Schema(String),

    /// Input data violates a structural requirement.
    #[error("validation error: {0}")]
    Validation(String),

    /// A value could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// An argument is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A computation left the representable range (overflow/underflow).
    #[error("range error: {0}")]
    Range(String),

    /// A posterior or target density could not be initialized.
    #[error("initialization error: {0}")]
    Init(String),

    /// An estimator degenerated (all mass on one point, empty partition, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A model-set partition required by an inclusion quantity is empty.
    #[error("partition error: {0}")]
    Partition(String),

    /// Convergence diagnostics could not be computed.
    #[error("diagnostic error: {0}")]
    Diagnostic(String),

    /// An iterative estimator failed to converge; carries the last iterate.
    #[error("bridge iteration did not converge (last log estimate {last})")]
    BridgeNonConvergence { last: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
