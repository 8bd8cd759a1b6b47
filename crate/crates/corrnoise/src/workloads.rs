//! Lower-triangular Toeplitz workloads: prefix sums and momentum-weighted sums.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{check_materialize, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkloadKind {
    Prefix,
    /// SGD with momentum `beta` and weight decay `weight_decay`.
    Momentum {
        beta: f64,
        weight_decay: f64,
    },
    /// Arbitrary first column; `coeffs.len()` must equal `n`.
    Custom {
        coeffs: Vec<f64>,
    },
}

/// Workload `A` with `A[t, τ] = a_{t-τ}` for `t ≥ τ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub n: usize,
    #[serde(flatten)]
    pub kind: WorkloadKind,
}

impl WorkloadSpec {
    pub fn prefix(n: usize) -> Self {
        Self { n, kind: WorkloadKind::Prefix }
    }

    pub fn momentum(n: usize, beta: f64, weight_decay: f64) -> Result<Self> {
        let spec = Self { n, kind: WorkloadKind::Momentum { beta, weight_decay } };
        spec.validate()?;
        Ok(spec)
    }

    pub fn custom(coeffs: Vec<f64>) -> Result<Self> {
        let spec = Self { n: coeffs.len(), kind: WorkloadKind::Custom { coeffs } };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Domain("workload needs n >= 1".into()));
        }
        match &self.kind {
            WorkloadKind::Prefix => Ok(()),
            WorkloadKind::Momentum { beta, weight_decay } => {
                for (name, v) in [("beta", beta), ("weight_decay", weight_decay)] {
                    if !(0.0..1.0).contains(v) {
                        return Err(Error::Domain(format!("{name} = {v} is outside [0, 1)")));
                    }
                }
                Ok(())
            }
            WorkloadKind::Custom { coeffs } => {
                if coeffs.len() != self.n {
                    return Err(Error::Shape { expected: self.n, got: coeffs.len() });
                }
                if coeffs[0] == 0.0 {
                    return Err(Error::Domain("custom workload needs a_0 != 0".into()));
                }
                Ok(())
            }
        }
    }

    /// True when every coefficient is exactly one.
    pub fn is_prefix(&self) -> bool {
        match &self.kind {
            WorkloadKind::Prefix => true,
            WorkloadKind::Momentum { beta, weight_decay } => *beta == 0.0 && *weight_decay == 0.0,
            WorkloadKind::Custom { coeffs } => coeffs.iter().all(|&a| a == 1.0),
        }
    }

    /// First column of `A`.
    ///
    /// Momentum weights `a_t = Σ_τ β^τ (1-λ)^{t-τ}` are produced by the forward
    /// recursion `a_t = (1-λ) a_{t-1} + β^t`, which stays accurate as β → 1.
    pub fn coefficients(&self) -> Result<Vec<f64>> {
        self.validate()?;
        Ok(match &self.kind {
            WorkloadKind::Prefix => vec![1.0; self.n],
            WorkloadKind::Momentum { beta, weight_decay } => {
                let decay = 1.0 - weight_decay;
                let mut a = Vec::with_capacity(self.n);
                let mut prev = 1.0;
                let mut beta_pow = 1.0;
                a.push(prev);
                for _ in 1..self.n {
                    beta_pow *= beta;
                    prev = decay * prev + beta_pow;
                    a.push(prev);
                }
                a
            }
            WorkloadKind::Custom { coeffs } => coeffs.clone(),
        })
    }

    /// `A v` without building `A`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n {
            return Err(Error::Shape { expected: self.n, got: v.len() });
        }
        if self.is_prefix() {
            self.validate()?;
            return Ok(v
                .iter()
                .scan(0.0, |acc, &x| {
                    *acc += x;
                    Some(*acc)
                })
                .collect());
        }
        let a = self.coefficients()?;
        Ok(toeplitz_lower_matvec(&a, v))
    }

    pub fn materialize(&self) -> Result<DMatrix<f64>> {
        check_materialize(self.n)?;
        let a = self.coefficients()?;
        Ok(toeplitz_lower(&a))
    }
}

/// Dense lower-triangular Toeplitz matrix with first column `c`.
pub fn toeplitz_lower(c: &[f64]) -> DMatrix<f64> {
    let n = c.len();
    DMatrix::from_fn(n, n, |t, s| if t >= s { c[t - s] } else { 0.0 })
}

/// `T v` for the lower-triangular Toeplitz `T` with first column `c`
/// (`c` may be shorter than `v`, meaning a banded matrix).
pub fn toeplitz_lower_matvec(c: &[f64], v: &[f64]) -> Vec<f64> {
    (0..v.len())
        .map(|t| {
            let lo = (t + 1).saturating_sub(c.len());
            (lo..=t).map(|s| c[t - s] * v[s]).sum()
        })
        .collect()
}
