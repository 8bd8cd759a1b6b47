//! Toy mini-batch DP-SGD with correlated noise on synthetic problems.
//!
//! Every run is paired with a noiseless twin that sees the same batches, so
//! `ĝ_t - g_t` isolates the injected noise.

use serde::{Deserialize, Serialize};

use crate::noisegen::{materialized_noise, regenerate_row, NoiseGenerator, NoiseSource};
use crate::privacy::{calibrate_nu, PrivacyTarget};
use crate::sensitivity::{strategy_sensitivity, ParticipationSchema};
use crate::strategies::Strategy;
use crate::{Error, Result};

/// Mixed into the run seed for data generation so it never shares a stream with the noise.
const DATA_SEED_SALT: u64 = 0x5eed_da7a_0000_0001;

/// `v · min(1, ζ/‖v‖₂)`.
pub fn clip(v: &[f64], zeta: f64) -> Result<Vec<f64>> {
    if !(zeta > 0.0) {
        return Err(Error::Domain(format!("clip norm {zeta} must be positive")));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= zeta {
        return Ok(v.to_vec());
    }
    let s = zeta / norm;
    Ok(v.iter().map(|x| x * s).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticProblem {
    /// Every example has gradient `(-1, 0)`.
    Constant2d,
    /// Least squares `½(xᵀθ - y)²` with `x ~ N(0, diag(eigenvalues))`.
    LinReg {
        eigenvalues: Vec<f64>,
        theta_star: Vec<f64>,
        /// `y = xᵀθ*` exactly; otherwise unit-variance label noise is added.
        realizable: bool,
    },
}

impl SyntheticProblem {
    pub fn dim(&self) -> usize {
        match self {
            Self::Constant2d => 2,
            Self::LinReg { eigenvalues, .. } => eigenvalues.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Self::LinReg { eigenvalues, theta_star, .. } = self {
            if eigenvalues.is_empty() || eigenvalues.iter().any(|e| !(*e > 0.0)) {
                return Err(Error::Config("covariance eigenvalues must be positive".into()));
            }
            if theta_star.len() != eigenvalues.len() {
                return Err(Error::Shape { expected: eigenvalues.len(), got: theta_star.len() });
            }
        }
        Ok(())
    }
}

/// A labelled example; `Constant2d` ignores it.
#[derive(Clone, Debug)]
struct Example {
    x: Vec<f64>,
    y: f64,
}

fn make_data(problem: &SyntheticProblem, count: usize, seed: u64) -> Vec<Example> {
    match problem {
        SyntheticProblem::Constant2d => vec![Example { x: Vec::new(), y: 0.0 }; count],
        SyntheticProblem::LinReg { eigenvalues, theta_star, realizable } => {
            let src = NoiseSource::new(seed ^ DATA_SEED_SALT, 1.0, eigenvalues.len() + 1);
            (0..count as u64)
                .map(|i| {
                    let raw = regenerate_row(&src, i);
                    let x: Vec<f64> = raw.iter().zip(eigenvalues).map(|(z, e)| z * e.sqrt()).collect();
                    let mut y: f64 = x.iter().zip(theta_star).map(|(a, b)| a * b).sum();
                    if !realizable {
                        y += raw[eigenvalues.len()];
                    }
                    Example { x, y }
                })
                .collect()
        }
    }
}

fn example_gradient(problem: &SyntheticProblem, ex: &Example, theta: &[f64]) -> Vec<f64> {
    match problem {
        SyntheticProblem::Constant2d => vec![-1.0, 0.0],
        SyntheticProblem::LinReg { .. } => {
            let r: f64 = ex.x.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() - ex.y;
            ex.x.iter().map(|a| a * r).collect()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLevel {
    /// Calibrate `ν` to this GDP target from the strategy's sensitivity.
    Mu(PrivacyTarget),
    /// Use this `ν` directly.
    Nu(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpsgdConfig {
    pub eta: f64,
    pub zeta: f64,
    pub noise: NoiseLevel,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRun {
    /// `θ_0, …, θ_n`.
    pub thetas: Vec<Vec<f64>>,
    pub noiseless_thetas: Vec<Vec<f64>>,
    pub nu: f64,
    /// `sqrt(mean_t ‖ĝ_t - g_t‖²)`.
    pub grad_rmse: f64,
    /// `sqrt(mean_t ‖Σ_{τ≤t} (ĝ_τ - g_τ)‖²)`.
    pub prefix_rmse: f64,
    /// `‖Σ_{τ≤t} (ĝ_τ - g_τ)‖²` for each step.
    pub per_step_prefix_error: Vec<f64>,
}

/// Example indices used at each step.
fn batch_schedule(schema: ParticipationSchema, steps: usize, batch: usize) -> Result<(usize, Vec<Vec<usize>>)> {
    let slots = |period: usize| -> Vec<Vec<usize>> {
        (0..steps).map(|t| ((t % period) * batch..(t % period + 1) * batch).collect()).collect()
    };
    match schema {
        ParticipationSchema::Single => Ok((steps * batch, slots(steps))),
        ParticipationSchema::Cyclic { b, .. } => Ok((b * batch, slots(b))),
        ParticipationSchema::MinSep { b, k } => {
            if steps.div_ceil(b) > k {
                return Err(Error::Config(format!(
                    "period-{b} batching gives {} participations, more than k = {k}",
                    steps.div_ceil(b)
                )));
            }
            Ok((b * batch, slots(b)))
        }
        ParticipationSchema::Full => Ok((batch, vec![(0..batch).collect(); steps])),
    }
}

fn noise_rows(strategy: &Strategy, source: NoiseSource, steps: usize) -> Result<Vec<Vec<f64>>> {
    match NoiseGenerator::new(strategy, source) {
        Ok(mut g) => (0..steps).map(|_| g.next_noise()).collect(),
        Err(Error::Unsupported(_)) => {
            let z = materialized_noise(strategy, &source, steps)?;
            Ok(z.row_iter().map(|r| r.iter().copied().collect()).collect())
        }
        Err(e) => Err(e),
    }
}

/// `θ_{t+1} = θ_t - η (ḡ_t + z̃_t / B)` from `θ_0 = 0`, alongside its noiseless twin.
///
/// `ν` is on the scale of a sum of clipped gradients, so the noise added to the
/// averaged gradient is `z̃_t / B`.
pub fn run_dpsgd(
    problem: &SyntheticProblem,
    strategy: &Strategy,
    schema: ParticipationSchema,
    config: &DpsgdConfig,
) -> Result<TrainingRun> {
    problem.validate()?;
    strategy.validate()?;
    let n = config.steps;
    if n == 0 || config.batch == 0 {
        return Err(Error::Config("steps and batch must be positive".into()));
    }
    if strategy.n != n {
        return Err(Error::Config(format!("strategy covers {} steps, run has {n}", strategy.n)));
    }
    if !(config.eta > 0.0) {
        return Err(Error::Config(format!("learning rate {} must be positive", config.eta)));
    }
    schema.validate(n).map_err(|e| Error::Config(e.to_string()))?;
    let nu = match config.noise {
        NoiseLevel::Nu(nu) if nu >= 0.0 => nu,
        NoiseLevel::Nu(nu) => return Err(Error::Config(format!("nu = {nu} must be nonnegative"))),
        NoiseLevel::Mu(target) => {
            let sens = strategy_sensitivity(strategy, schema)?.value * config.zeta;
            calibrate_nu(sens, target)?
        }
    };
    let m = problem.dim();
    let (count, schedule) = batch_schedule(schema, n, config.batch)?;
    let data = make_data(problem, count, config.seed);
    let noise = noise_rows(strategy, NoiseSource::new(config.seed, nu, m), n)?;

    let avg_grad = |theta: &[f64], batch: &[usize]| -> Result<Vec<f64>> {
        let mut g = vec![0.0; m];
        for &i in batch {
            for (a, v) in g.iter_mut().zip(clip(&example_gradient(problem, &data[i], theta), config.zeta)?) {
                *a += v;
            }
        }
        Ok(g.into_iter().map(|v| v / batch.len() as f64).collect())
    };

    let bsz = config.batch as f64;
    let mut thetas = vec![vec![0.0; m]];
    let mut twins = vec![vec![0.0; m]];
    let mut prefix = vec![0.0; m];
    let mut per_step = Vec::with_capacity(n);
    let mut grad_sq = 0.0;
    for (t, batch) in schedule.iter().enumerate() {
        let g_noisy = avg_grad(&thetas[t], batch)?;
        let g_clean = avg_grad(&twins[t], batch)?;
        let g_hat: Vec<f64> = g_noisy.iter().zip(&noise[t]).map(|(g, z)| g + z / bsz).collect();
        let mut step_sq = 0.0;
        for j in 0..m {
            let e = g_hat[j] - g_clean[j];
            step_sq += e * e;
            prefix[j] += e;
        }
        grad_sq += step_sq;
        per_step.push(prefix.iter().map(|x| x * x).sum());
        thetas.push(thetas[t].iter().zip(&g_hat).map(|(th, g)| th - config.eta * g).collect());
        twins.push(twins[t].iter().zip(&g_clean).map(|(th, g)| th - config.eta * g).collect());
    }
    let prefix_rmse = (per_step.iter().sum::<f64>() / n as f64).sqrt();
    Ok(TrainingRun {
        thetas,
        noiseless_thetas: twins,
        nu,
        grad_rmse: (grad_sq / n as f64).sqrt(),
        prefix_rmse,
        per_step_prefix_error: per_step,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn of(xs: &[f64]) -> Self {
        let k = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / k;
        let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0) } else { 0.0 };
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub seeds: usize,
    pub nu: f64,
    pub grad_rmse: MeanStd,
    pub prefix_rmse: MeanStd,
    /// Mean over seeds of the squared prefix error at each step.
    pub mean_per_step_prefix_error: Vec<f64>,
}

/// Repeats [`run_dpsgd`] with seeds `config.seed, config.seed + 1, …`.
pub fn simulate(
    problem: &SyntheticProblem,
    strategy: &Strategy,
    schema: ParticipationSchema,
    config: &DpsgdConfig,
    seeds: usize,
) -> Result<SimulationSummary> {
    if seeds == 0 {
        return Err(Error::Config("need at least one seed".into()));
    }
    let mut grads = Vec::with_capacity(seeds);
    let mut prefixes = Vec::with_capacity(seeds);
    let mut per_step = vec![0.0; config.steps];
    let mut nu = 0.0;
    for s in 0..seeds as u64 {
        let cfg = DpsgdConfig { seed: config.seed.wrapping_add(s), ..config.clone() };
        let run = run_dpsgd(problem, strategy, schema, &cfg)?;
        grads.push(run.grad_rmse);
        prefixes.push(run.prefix_rmse);
        for (a, v) in per_step.iter_mut().zip(&run.per_step_prefix_error) {
            *a += v / seeds as f64;
        }
        nu = run.nu;
    }
    Ok(SimulationSummary {
        seeds,
        nu,
        grad_rmse: MeanStd::of(&grads),
        prefix_rmse: MeanStd::of(&prefixes),
        mean_per_step_prefix_error: per_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::privacy::Adjacency;

    fn cfg(noise: NoiseLevel, steps: usize, seed: u64) -> DpsgdConfig {
        DpsgdConfig { eta: 0.1, zeta: 1.0, noise, batch: 1, steps, seed }
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip(&[3.0, 4.0], 5.0).unwrap(), vec![3.0, 4.0]);
        let c = clip(&[3.0, 4.0], 1.0).unwrap();
        assert!((c[0] - 0.6).abs() < 1e-15 && (c[1] - 0.8).abs() < 1e-15);
        assert_eq!(clip(&[0.0, 0.0], 2.0).unwrap(), vec![0.0, 0.0]);
        assert!(clip(&[1.0], 0.0).is_err());
    }

    #[test]
    fn zero_noise_matches_twin_bitwise() {
        let problem = SyntheticProblem::LinReg {
            eigenvalues: vec![1.0, 0.5, 0.1],
            theta_star: vec![1.0, -2.0, 0.5],
            realizable: false,
        };
        let s = Strategy::optimal_toeplitz(20);
        let inf = PrivacyTarget { mu: f64::INFINITY, adjacency: Adjacency::ZeroOut };
        for noise in [NoiseLevel::Nu(0.0), NoiseLevel::Mu(inf)] {
            let run = run_dpsgd(&problem, &s, ParticipationSchema::Single, &cfg(noise, 20, 3)).unwrap();
            assert_eq!(run.thetas, run.noiseless_thetas);
            assert_eq!(run.prefix_rmse, 0.0);
        }
    }

    #[test]
    fn prefix_error_equals_parameter_gap() {
        let s = Strategy::optimal_toeplitz(10);
        let run =
            run_dpsgd(&SyntheticProblem::Constant2d, &s, ParticipationSchema::Single, &cfg(NoiseLevel::Nu(1.0), 10, 0))
                .unwrap();
        for t in 0..10 {
            let gap: f64 =
                run.thetas[t + 1].iter().zip(&run.noiseless_thetas[t + 1]).map(|(a, b)| ((a - b) / 0.1).powi(2)).sum();
            assert!((gap - run.per_step_prefix_error[t]).abs() < 1e-9 * (1.0 + gap));
        }
    }

    #[test]
    fn schedule_and_length_checks() {
        let s = Strategy::identity(8);
        let p = SyntheticProblem::Constant2d;
        assert!(run_dpsgd(&p, &s, ParticipationSchema::Single, &cfg(NoiseLevel::Nu(1.0), 9, 0)).is_err());
        let bad = ParticipationSchema::MinSep { b: 2, k: 3 };
        assert!(matches!(run_dpsgd(&p, &s, bad, &cfg(NoiseLevel::Nu(1.0), 8, 0)), Err(Error::Config(_))));
        let ok = ParticipationSchema::Cyclic { b: 4, k: 2 };
        assert!(run_dpsgd(&p, &s, ok, &cfg(NoiseLevel::Nu(1.0), 8, 0)).is_ok());
    }

    #[test]
    fn deterministic() {
        let s = Strategy::optimal_toeplitz(12);
        let c = cfg(NoiseLevel::Nu(0.7), 12, 42);
        let a = run_dpsgd(&SyntheticProblem::Constant2d, &s, ParticipationSchema::Single, &c).unwrap();
        let b = run_dpsgd(&SyntheticProblem::Constant2d, &s, ParticipationSchema::Single, &c).unwrap();
        assert_eq!(a, b);
    }
}
