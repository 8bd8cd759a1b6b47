//! Noise calibration for μ-GDP, the zCDP conversion, and the banded amplification reduction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Adjacency {
    /// Neighbouring datasets differ by zeroing one example's contribution.
    #[default]
    ZeroOut,
    /// Neighbouring datasets swap one example for another; sensitivity doubles.
    ReplaceOne,
}

impl Adjacency {
    pub fn factor(self) -> f64 {
        match self {
            Self::ZeroOut => 1.0,
            Self::ReplaceOne => 2.0,
        }
    }
}

impl fmt::Display for Adjacency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ZeroOut => "zero-out",
            Self::ReplaceOne => "replace-one",
        })
    }
}

impl FromStr for Adjacency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().replace('_', "-").as_str() {
            "zero-out" => Ok(Self::ZeroOut),
            "replace-one" => Ok(Self::ReplaceOne),
            other => Err(Error::Config(format!("unknown adjacency '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyTarget {
    pub mu: f64,
    pub adjacency: Adjacency,
}

impl PrivacyTarget {
    pub fn new(mu: f64, adjacency: Adjacency) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(Error::Domain(format!("mu = {mu} must be positive")));
        }
        Ok(Self { mu, adjacency })
    }
}

/// Noise standard deviation for `target`: `ν = sens/μ`, doubled under replace-one.
///
/// `ν` is on the scale of the sum of gradients. `μ = ∞` gives zero noise.
pub fn calibrate_nu(sensitivity: f64, target: PrivacyTarget) -> Result<f64> {
    if !(target.mu > 0.0) {
        return Err(Error::Domain(format!("mu = {} must be positive", target.mu)));
    }
    if !(sensitivity >= 0.0) {
        return Err(Error::Domain(format!("sensitivity {sensitivity} must be nonnegative")));
    }
    Ok(target.adjacency.factor() * sensitivity / target.mu)
}

/// The μ achieved by noise `nu` at sensitivity `sensitivity`.
pub fn mu_from_nu(sensitivity: f64, nu: f64, adjacency: Adjacency) -> Result<f64> {
    if !(nu > 0.0) {
        return Err(Error::Domain(format!("nu = {nu} must be positive")));
    }
    Ok(adjacency.factor() * sensitivity / nu)
}

/// `ρ = μ²/2`.
pub fn gdp_to_zcdp(mu: f64) -> Result<f64> {
    if !(mu >= 0.0) {
        return Err(Error::Domain(format!("mu = {mu} must be nonnegative")));
    }
    Ok(mu * mu / 2.0)
}

/// Independent-noise DP-SGD run with the same privacy as a `b`-banded mechanism under
/// block-cyclic Poisson sampling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplifiedEquivalent {
    pub n_prime: usize,
    pub p_prime: f64,
    pub nu_prime: f64,
}

/// Maps `(n, b, B, N, ν, colnorm)` to `(n/b, B·b/N, ν/colnorm)`.
///
/// This is a parameter reduction only; turning it into an (ε, δ) curve needs an
/// external subsampled-Gaussian accountant.
pub fn amplification_reduction(
    n: usize,
    bands: usize,
    batch: usize,
    dataset: usize,
    nu: f64,
    colnorm: f64,
) -> Result<AmplifiedEquivalent> {
    if bands == 0 || n % bands != 0 {
        return Err(Error::Domain(format!("band count {bands} must divide n = {n}")));
    }
    if dataset == 0 || batch * bands > dataset {
        return Err(Error::Domain(format!("sampling probability B·b/N = {}·{}/{} exceeds 1", batch, bands, dataset)));
    }
    if !(colnorm > 0.0) {
        return Err(Error::Domain(format!("column norm {colnorm} must be positive")));
    }
    Ok(AmplifiedEquivalent {
        n_prime: n / bands,
        p_prime: (batch * bands) as f64 / dataset as f64,
        nu_prime: nu / colnorm,
    })
}
