//! Correlated-noise (matrix factorization) mechanisms for differentially
//! private prefix sums and DP-SGD.
//!
//! A mechanism factors a lower-triangular workload `A = B C`. The encoder `C`
//! sets the sensitivity, the decoder `B` multiplies the injected noise, and the
//! noise actually added to the gradient stream is `C⁻¹ Z`.

pub mod descriptor;
pub mod dpsgd;
mod error;
pub mod loss;
pub mod noisegen;
pub mod optimizer;
pub mod privacy;
pub mod sensitivity;
pub mod strategies;
pub mod tables;
pub mod workloads;

pub use error::{Error, Result};

/// Environment variable overriding [`DEFAULT_MATERIALIZE_LIMIT`].
pub const MATERIALIZE_LIMIT_ENV: &str = "CORRNOISE_MATERIALIZE_LIMIT";

/// Largest `n` for which an `n × n` dense matrix is built by default.
pub const DEFAULT_MATERIALIZE_LIMIT: usize = 16384;

/// Current dense materialization limit, honouring [`MATERIALIZE_LIMIT_ENV`].
pub fn materialize_limit() -> usize {
    std::env::var(MATERIALIZE_LIMIT_ENV).ok().and_then(|v| v.trim().parse().ok()).unwrap_or(DEFAULT_MATERIALIZE_LIMIT)
}

pub(crate) fn check_materialize(n: usize) -> Result<()> {
    let limit = materialize_limit();
    if n > limit {
        return Err(Error::SizeLimit { n, limit });
    }
    Ok(())
}
