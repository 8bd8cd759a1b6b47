//! Numerical strategy optimization: dense Gram matrices for RMS loss, banded
//! Toeplitz coefficients, and BLT parameters.

mod dense;
pub mod lbfgs;
mod toeplitz;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use dense::{optimize_dense_multi, optimize_dense_streaming};
pub use lbfgs::{minimize_smooth, MinimizeOutcome};

use crate::loss::evaluate_loss;
use crate::noisegen::{regenerate_row, NoiseSource};
use crate::sensitivity::ParticipationSchema;
use crate::strategies::{optimal_toeplitz_coeffs, Strategy, DEGENERACY_TOL};
use crate::workloads::WorkloadSpec;
use crate::{Error, Result};
use toeplitz::{banded_objective, blt_objective, ErrorTerm, SensTerm};

/// Largest supported BLT buffer count.
pub const MAX_BLT_BUFFERS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossObjective {
    #[default]
    Max,
    Rms,
}

impl fmt::Display for LossObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Max => "max",
            Self::Rms => "rms",
        })
    }
}

impl FromStr for LossObjective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "max" => Ok(Self::Max),
            "rms" => Ok(Self::Rms),
            other => Err(Error::Config(format!("unknown loss '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Convergence threshold on the gradient ∞-norm.
    pub gradient_tolerance: f64,
    pub memory_pairs: usize,
    /// Initial log-barrier weight for BLT parameters, halved on each restart.
    pub barrier_weight: f64,
    pub barrier_restarts: usize,
    pub seed: u64,
    /// Loss minimized by the Toeplitz-family optimizers. Dense optimization is RMS only.
    pub loss: LossObjective,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-8,
            memory_pairs: 10,
            barrier_weight: 1e-3,
            barrier_restarts: 3,
            seed: 0,
            loss: LossObjective::Max,
        }
    }
}

impl OptimizerConfig {
    pub fn with_loss(loss: LossObjective) -> Self {
        Self { loss, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.memory_pairs == 0 {
            return Err(Error::Config("max_iterations and memory_pairs must be positive".into()));
        }
        if !(self.gradient_tolerance > 0.0) || !(self.barrier_weight > 0.0) {
            return Err(Error::Config("gradient_tolerance and barrier_weight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizationResult {
    pub strategy: Strategy,
    /// Normalized loss of `strategy` for the optimized objective.
    pub objective: f64,
    /// The same loss at the starting point.
    pub initial_objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Gradient ∞-norm on the free entries at the solution (dense only).
    pub certificate: Option<f64>,
}

fn toeplitz_terms(
    workload: &WorkloadSpec,
    schema: ParticipationSchema,
    loss: LossObjective,
) -> Result<(ErrorTerm, SensTerm)> {
    workload.validate()?;
    schema.validate(workload.n)?;
    let (sep, k) = schema.shift_pattern(workload.n);
    Ok((ErrorTerm::new(workload.coefficients()?, workload.is_prefix(), loss), SensTerm { sep, k }))
}

fn normalized(
    workload: &WorkloadSpec,
    strategy: &Strategy,
    schema: ParticipationSchema,
    loss: LossObjective,
) -> Result<f64> {
    let r = evaluate_loss(workload, strategy, schema)?;
    Ok(match loss {
        LossObjective::Max => r.normalized_max_loss,
        LossObjective::Rms => r.normalized_rms_loss,
    })
}

/// Optimizes the first `bands` coefficients of a banded Toeplitz `C` with `c_0 = 1`,
/// starting from the truncated square-root factorization.
///
/// Under multi-participation `bands` may not exceed the separation, which keeps the
/// shifted-sum sensitivity exact.
pub fn optimize_banded_toeplitz(
    workload: &WorkloadSpec,
    bands: usize,
    schema: ParticipationSchema,
    config: &OptimizerConfig,
) -> Result<OptimizationResult> {
    config.validate()?;
    let n = workload.n;
    if bands == 0 || bands > n {
        return Err(Error::Config(format!("band count {bands} must lie in 1..={n}")));
    }
    if schema != ParticipationSchema::Single {
        let (sep, _) = schema.shift_pattern(n);
        if bands > sep {
            return Err(Error::Config(format!("band count {bands} exceeds the {schema} separation {sep}")));
        }
    }
    let (err, sens) = toeplitz_terms(workload, schema, config.loss)?;
    let mut init = optimal_toeplitz_coeffs(bands);
    let start = Strategy::banded(n, init.clone())?;
    let initial_objective = normalized(workload, &start, schema, config.loss)?;

    let x0 = init.split_off(1);
    let mut c = vec![1.0; bands];
    let f = |x: &[f64], g: &mut [f64]| {
        c[1..].copy_from_slice(x);
        let mut full = vec![0.0; bands];
        let v = banded_objective(&err, &sens, &c, &mut full);
        g.copy_from_slice(&full[1..]);
        v
    };
    let out = minimize_smooth(f, x0, config, None)?;
    let mut coeffs = vec![1.0];
    coeffs.extend_from_slice(&out.x);
    let strategy = Strategy::banded(n, coeffs)?;
    let objective = normalized(workload, &strategy, schema, config.loss)?;
    Ok(OptimizationResult {
        strategy,
        objective,
        initial_objective,
        iterations: out.iterations,
        converged: out.converged,
        certificate: None,
    })
}

/// Starting BLT parameters: decays spread geometrically towards `1 - 1/n`.
pub fn blt_initial_params(n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let lambda = (0..d)
        .map(|i| {
            let geo = 1.0 - (n.max(2) as f64).powf(-((i + 1) as f64) / d as f64);
            geo.max((i + 1) as f64 / (d + 2) as f64)
        })
        .collect();
    (vec![0.5 / d as f64; d], lambda)
}

fn blt_barrier(x: &[f64], g: &mut [f64], weight: f64) -> f64 {
    let d = x.len() / 2;
    let mut v = 0.0;
    for i in 0..d {
        let (a, l) = (x[i], x[d + i]);
        v -= a.ln() + l.ln() + (1.0 - l).ln();
        g[i] -= weight / a;
        g[d + i] -= weight * (1.0 / l - 1.0 / (1.0 - l));
    }
    weight * v
}

fn blt_feasible(x: &[f64]) -> bool {
    let d = x.len() / 2;
    x[..d].iter().all(|&a| a > 0.0 && a.is_finite()) && x[d..].iter().all(|&l| l > 0.0 && l < 1.0)
}

fn has_collision(lambda: &[f64]) -> bool {
    lambda.iter().enumerate().any(|(i, a)| lambda[i + 1..].iter().any(|b| (a - b).abs() < DEGENERACY_TOL))
}

struct BltRun {
    x: Vec<f64>,
    loss: f64,
    iterations: usize,
    converged: bool,
}

/// Barrier continuation from `x0`, keeping the best pure-loss iterate.
fn blt_continuation(err: &ErrorTerm, sens: &SensTerm, x0: Vec<f64>, config: &OptimizerConfig) -> Result<BltRun> {
    let d = x0.len() / 2;
    let pure = |x: &[f64]| blt_objective(err, sens, &x[..d], &x[d..], &mut vec![0.0; 2 * d]);
    let mut best = BltRun { loss: pure(&x0), x: x0.clone(), iterations: 0, converged: false };
    let mut x = x0;
    let mut weight = config.barrier_weight;
    for _ in 0..=config.barrier_restarts {
        let f = |p: &[f64], g: &mut [f64]| {
            if !blt_feasible(p) {
                return f64::INFINITY;
            }
            blt_objective(err, sens, &p[..d], &p[d..], g) + blt_barrier(p, g, weight)
        };
        let out = minimize_smooth(f, x, config, None)?;
        best.iterations += out.iterations;
        let loss = pure(&out.x);
        if loss <= best.loss {
            best.loss = loss;
            best.x = out.x.clone();
        }
        best.converged = out.converged;
        x = out.x;
        weight *= 0.5;
    }
    Ok(best)
}

/// Optimizes a `d`-buffer BLT under a log barrier keeping `α > 0` and `0 < λ < 1`.
///
/// `d = 0` returns the identity. A solution with two coincident decays is perturbed
/// and re-optimized once before giving up.
pub fn optimize_blt(
    workload: &WorkloadSpec,
    d: usize,
    schema: ParticipationSchema,
    config: &OptimizerConfig,
) -> Result<OptimizationResult> {
    config.validate()?;
    let n = workload.n;
    if d > MAX_BLT_BUFFERS {
        return Err(Error::Config(format!("buffer count {d} exceeds {MAX_BLT_BUFFERS}")));
    }
    let (err, sens) = toeplitz_terms(workload, schema, config.loss)?;
    if d == 0 {
        let strategy = Strategy::identity(n);
        let objective = normalized(workload, &strategy, schema, config.loss)?;
        return Ok(OptimizationResult {
            strategy,
            objective,
            initial_objective: objective,
            iterations: 0,
            converged: true,
            certificate: None,
        });
    }
    let (alpha0, lambda0) = blt_initial_params(n, d);
    let initial_objective =
        normalized(workload, &Strategy::blt(n, alpha0.clone(), lambda0.clone())?, schema, config.loss)?;

    let mut x0 = alpha0;
    x0.extend(lambda0);
    let mut run = blt_continuation(&err, &sens, x0, config)?;
    if has_collision(&run.x[d..]) {
        let jitter = regenerate_row(&NoiseSource::new(config.seed, 1e-3, 2 * d), 0);
        let mut x = run.x.clone();
        for (v, j) in x.iter_mut().zip(jitter) {
            *v *= 1.0 + j.clamp(-0.01, 0.01);
        }
        for l in &mut x[d..] {
            *l = l.clamp(1e-6, 1.0 - 1e-6);
        }
        let retry = blt_continuation(&err, &sens, x, config)?;
        if has_collision(&retry.x[d..]) {
            return Err(Error::Degenerate("BLT decays collided after a perturbed restart".into()));
        }
        run = BltRun { iterations: run.iterations + retry.iterations, ..retry };
    }
    // Canonical order: decreasing decay.
    let mut pairs: Vec<(f64, f64)> = run.x[..d].iter().copied().zip(run.x[d..].iter().copied()).collect();
    pairs.sort_by(|a, b| b.1.total_cmp(&a.1));
    let (alpha, lambda): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let strategy = Strategy::blt(n, alpha, lambda)?;
    let objective = normalized(workload, &strategy, schema, config.loss)?;
    Ok(OptimizationResult {
        strategy,
        objective,
        initial_objective,
        iterations: run.iterations,
        converged: run.converged,
        certificate: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn banded_full_width_reaches_optimal_toeplitz() {
        let w = WorkloadSpec::prefix(8);
        let r = optimize_banded_toeplitz(&w, 8, ParticipationSchema::Single, &OptimizerConfig::default()).unwrap();
        assert!((r.objective - 1.718).abs() < 0.005, "{}", r.objective);
    }

    #[test]
    fn banded_single_band_is_identity() {
        let w = WorkloadSpec::prefix(8);
        let r = optimize_banded_toeplitz(&w, 1, ParticipationSchema::Single, &OptimizerConfig::default()).unwrap();
        assert!((r.objective - 8f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn banded_two_does_not_worsen_start() {
        let w = WorkloadSpec::prefix(8);
        let r = optimize_banded_toeplitz(&w, 2, ParticipationSchema::Single, &OptimizerConfig::default()).unwrap();
        assert!(r.objective <= r.initial_objective + 1e-12);
    }

    #[test]
    fn banded_rejects_bands_beyond_separation() {
        let w = WorkloadSpec::prefix(8);
        let s = ParticipationSchema::MinSep { b: 2, k: 4 };
        assert!(matches!(optimize_banded_toeplitz(&w, 3, s, &OptimizerConfig::default()), Err(Error::Config(_))));
        let r = optimize_banded_toeplitz(&w, 2, s, &OptimizerConfig::default()).unwrap();
        assert!(r.objective <= r.initial_objective + 1e-12);
    }

    #[test]
    fn rms_full_width_toeplitz_matches_table() {
        let w = WorkloadSpec::prefix(8);
        let r = optimize_banded_toeplitz(
            &w,
            8,
            ParticipationSchema::Single,
            &OptimizerConfig::with_loss(LossObjective::Rms),
        )
        .unwrap();
        assert!((r.objective - 1.544).abs() < 0.001, "{}", r.objective);
    }

    #[test]
    fn blt_small() {
        let w = WorkloadSpec::prefix(8);
        let r = optimize_blt(&w, 4, ParticipationSchema::Single, &OptimizerConfig::default()).unwrap();
        assert!(r.objective <= 1.73, "{}", r.objective);
        assert!(r.objective <= r.initial_objective);
    }

    #[test]
    fn blt_zero_buffers_is_identity() {
        let w = WorkloadSpec::prefix(8);
        let r = optimize_blt(&w, 0, ParticipationSchema::Single, &OptimizerConfig::default()).unwrap();
        assert!((r.objective - 8f64.sqrt()).abs() < 1e-12);
        assert!(optimize_blt(&w, 11, ParticipationSchema::Single, &OptimizerConfig::default()).is_err());
    }

    #[test]
    fn blt_multi_participation_improves_on_start() {
        let w = WorkloadSpec::prefix(32);
        let r = optimize_blt(&w, 2, ParticipationSchema::MinSep { b: 8, k: 4 }, &OptimizerConfig::default()).unwrap();
        assert!(r.objective <= r.initial_objective);
        assert!(r.objective < 32f64.sqrt() * 2.0);
    }
}
