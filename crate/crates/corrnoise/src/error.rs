use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    Domain(String),
    #[error("shape mismatch: expected length {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("size {n} exceeds the materialization limit {limit}")]
    SizeLimit { n: usize, limit: usize },
    #[error("singular strategy: {0}")]
    Singular(String),
    #[error("degenerate parameters: {0}")]
    Degenerate(String),
    #[error("invalid participation schema: {0}")]
    Schema(String),
    #[error("{count} participation patterns exceed the enumeration limit {limit}; use the banded DP or the Toeplitz closed form")]
    EnumerationLimit { count: u128, limit: u128 },
    #[error("Toeplitz coefficients must be nonnegative and nonincreasing for the closed form")]
    NotMonotone,
    #[error("unsupported combination: {0}")]
    Unsupported(String),
    #[error("optimized Gram matrix is not positive definite: {0}")]
    Indefinite(String),
    #[error("noise stream exhausted after {0} steps")]
    Exhausted(usize),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
