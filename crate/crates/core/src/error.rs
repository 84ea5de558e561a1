use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("non-finite value in {context} at row {row}, column {col}")]
    NonFinite {
        context: &'static str,
        row: usize,
        col: usize,
    },

    #[error("training diverged at step {step}: non-finite gradient in {block}")]
    TrainingDiverged { step: u64, block: String },

    #[error("sampler failed at iteration {iter}: {source}")]
    Sampler {
        iter: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("ODE integration produced a non-finite state at step {step}")]
    Integration { step: usize },

    #[error("infeasible target: {0}")]
    Infeasible(String),

    #[error("degenerate sample at row {row}: {reason}")]
    DegenerateSample { row: usize, reason: &'static str },

    #[error("density integrates to {mass} on the support, expected 1")]
    Normalization { mass: f64 },

    #[error("insufficient samples: need {needed}, have {available}")]
    InsufficientSamples { needed: usize, available: usize },

    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },

    #[error("CSV schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Dimension {
            context,
            expected,
            found,
        });
    }
    Ok(())
}
