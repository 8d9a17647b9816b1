use thiserror::Error;

/// Error taxonomy shared by every module in the crate.
///
/// The variants separate caller mistakes (dimension, contract, configuration,
/// validation) from data problems (format, parse) and runtime failures
/// (numerical integrity, training divergence, I/O) so that the CLI can map
/// them onto exit codes and tests can assert on the failure class.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes disagree with an operation's requirements.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// An argument violates a documented precondition.
    #[error("contract error: {0}")]
    Contract(String),
    /// Missing or inconsistent configuration (parameters, config files).
    #[error("configuration error: {0}")]
    Config(String),
    /// A numerical invariant broke at runtime (e.g. imaginary residue).
    #[error("numerical integrity error: {0}")]
    Numerical(String),
    /// A binary or JSON payload does not match its declared format.
    #[error("format error: {0}")]
    Format(String),
    /// Referential or semantic problems in otherwise well-formed input.
    #[error("validation error: {0}")]
    Validation(String),
    /// Syntactic parse failure, located by byte offset in the input.
    #[error("parse error at byte {offset} (line {line}, column {column}): {message}")]
    Parse {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    /// The optimizer produced a non-finite loss.
    #[error("training diverged: non-finite loss at step {step}")]
    Training { step: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
