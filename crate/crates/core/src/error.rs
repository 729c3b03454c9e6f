use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("matrix is not Hermitian (max asymmetry {asymmetry:e})")]
    NotHermitian { asymmetry: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("stationary distribution is not unique: eigenvalue-1 space has dimension {dimension}")]
    NonUniqueStationary { dimension: usize },

    #[error("chain does not mix: {0}")]
    NoMixing(String),

    #[error("inconclusive certificate: {0}")]
    Inconclusive(String),

    #[error("invalid Lyapunov function: {0}")]
    InvalidLyapunov(String),

    #[error("function table is not centered: |pi(F)| = {norm:e}")]
    Uncentered { norm: f64 },

    #[error("series did not converge within {iterations} terms (last increment {increment:e})")]
    NonConvergence { iterations: usize, increment: f64 },

    #[error("state mismatch: chain has {chain} states, table has {table}")]
    StateMismatch { chain: usize, table: usize },

    #[error("enumeration too large: {size} cases exceeds cap {cap}")]
    EnumerationTooLarge { size: u128, cap: u128 },

    #[error("precondition violated: {0}")]
    Precondition(String),
}
