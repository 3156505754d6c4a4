use thiserror::Error;

/// Errors raised by the simulation core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate geometry: {link} has zero length")]
    DegenerateGeometry { link: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(&'static str),

    #[error(
        "exhaustive search over {bits}-bit phases for {elements} elements needs 2^{} evaluations \
         (limit 2^{limit_log2}); use greedy mode instead",
        *bits as usize * *elements
    )]
    SearchTooLarge {
        bits: u32,
        elements: usize,
        limit_log2: u32,
    },

    #[error("resource guard: {0}")]
    ResourceLimit(String),
}

pub type Result<T> = std::result::Result<T, Error>;
