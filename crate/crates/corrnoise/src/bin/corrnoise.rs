use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Map};

use corrnoise::descriptor::MechanismDescriptor;
use corrnoise::dpsgd::{simulate, DpsgdConfig, NoiseLevel, SyntheticProblem};
use corrnoise::loss::evaluate_loss;
use corrnoise::noisegen::{materialized_noise, NoiseGenerator, NoiseSource};
use corrnoise::optimizer::{
    optimize_banded_toeplitz, optimize_blt, optimize_dense_multi, LossObjective, OptimizationResult, OptimizerConfig,
};
use corrnoise::privacy::{calibrate_nu, Adjacency, PrivacyTarget};
use corrnoise::sensitivity::{enumerate_patterns, inf_to_2_norm_bruteforce, strategy_sensitivity, ParticipationSchema};
use corrnoise::strategies::Strategy;
use corrnoise::tables::{compute_table, Column, TableName, TableOptions};
use corrnoise::workloads::WorkloadSpec;
use corrnoise::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "corrnoise", version, about = "Correlated-noise mechanisms for private prefix sums and DP-SGD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Dense,
    BandedToeplitz,
    Blt,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Max,
    Rms,
}

impl From<LossArg> for LossObjective {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Max => Self::Max,
            LossArg::Rms => Self::Rms,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseFormat {
    Csv,
    F64le,
}

#[derive(Clone, Copy, ValueEnum)]
enum Oracle {
    Brute,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProblemArg {
    Constant2d,
    Linreg,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a mechanism and write its descriptor.
    Optimize {
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        #[arg(long)]
        steps: usize,
        #[arg(long, value_enum)]
        loss: LossArg,
        #[arg(long, default_value = "single")]
        schema: ParticipationSchema,
        /// `prefix` or `momentum:BETA[,WEIGHT_DECAY]`.
        #[arg(long, default_value = "prefix")]
        workload: String,
        #[arg(long)]
        bands: Option<usize>,
        #[arg(long, default_value_t = 4)]
        buffers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        max_iterations: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report sensitivity, errors and normalized losses of a mechanism as JSON.
    Evaluate {
        #[arg(long)]
        mechanism: PathBuf,
        #[arg(long, default_value = "single")]
        schema: ParticipationSchema,
        #[arg(long, default_value = "prefix")]
        workload: String,
        /// Accepted for compatibility; both losses are always reported.
        #[arg(long)]
        loss: Option<String>,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long, default_value = "zero-out")]
        adjacency: Adjacency,
    },
    /// Report the sensitivity of a mechanism as JSON.
    Sensitivity {
        #[arg(long)]
        mechanism: PathBuf,
        #[arg(long, default_value = "single")]
        schema: ParticipationSchema,
        /// Also compute the sensitivity by exhaustive search and compare.
        #[arg(long, value_enum)]
        oracle: Option<Oracle>,
    },
    /// Write correlated noise rows.
    Noise {
        #[arg(long)]
        mechanism: PathBuf,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        nu: f64,
        #[arg(long, value_enum, default_value = "csv")]
        format: NoiseFormat,
        /// Compute `C⁻¹Z` from dense matrices instead of streaming.
        #[arg(long)]
        materialized: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a comparison table as CSV.
    Table {
        #[arg(long, value_parser = ["max-error", "rmse"])]
        name: String,
        #[arg(long, value_delimiter = ',', required = true)]
        steps: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        columns: Option<Vec<String>>,
        #[arg(long, default_value_t = TableOptions::default().dense_limit)]
        dense_limit: usize,
        #[arg(long, default_value_t = TableOptions::default().full_h2_limit)]
        full_h2_limit: usize,
        #[arg(long, default_value_t = 4)]
        buffers: usize,
    },
    /// Monte-Carlo DP-SGD runs on a synthetic problem.
    Simulate {
        #[arg(long, value_enum)]
        problem: ProblemArg,
        #[arg(long)]
        mechanism: PathBuf,
        #[arg(long, conflicts_with = "nu")]
        mu: Option<f64>,
        #[arg(long)]
        nu: Option<f64>,
        #[arg(long, default_value = "zero-out")]
        adjacency: Adjacency,
        #[arg(long, default_value = "single")]
        schema: ParticipationSchema,
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        clip: f64,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Linear-regression dimension; eigenvalues are `1/(i+1)` and `θ* = 1`.
        #[arg(long, default_value_t = 4)]
        dim: usize,
        #[arg(long)]
        realizable: bool,
        /// Also write per-step mean squared prefix errors as CSV.
        #[arg(long)]
        per_step_csv: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Indefinite(_) | Error::Degenerate(_) => EXIT_NUMERICAL,
                _ => EXIT_CONFIG,
            };
            ExitCode::from(code)
        }
    }
}

fn parse_workload(spec: &str, n: usize) -> corrnoise::Result<WorkloadSpec> {
    let spec = spec.trim();
    if spec == "prefix" {
        return Ok(WorkloadSpec::prefix(n));
    }
    let bad = || Error::Config(format!("unknown workload '{spec}'"));
    let args = spec.strip_prefix("momentum:").ok_or_else(bad)?;
    let nums: Vec<f64> = args.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
    match nums[..] {
        [beta] => WorkloadSpec::momentum(n, beta, 0.0),
        [beta, wd] => WorkloadSpec::momentum(n, beta, wd),
        _ => Err(bad()),
    }
}

fn print_json<T: Serialize>(value: &T) -> corrnoise::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn load(path: &PathBuf) -> corrnoise::Result<Strategy> {
    MechanismDescriptor::read_file(path)?.to_strategy()
}

fn io_err(e: std::io::Error) -> Error {
    Error::Config(format!("I/O error: {e}"))
}

fn run(command: Command) -> corrnoise::Result<ExitCode> {
    match command {
        Command::Optimize { strategy, steps, loss, schema, workload, bands, buffers, seed, max_iterations, out } => {
            let workload = parse_workload(&workload, steps)?;
            let loss = LossObjective::from(loss);
            let mut config = OptimizerConfig { seed, loss, ..OptimizerConfig::default() };
            if let Some(it) = max_iterations {
                config.max_iterations = it;
            }
            let result: OptimizationResult = match strategy {
                StrategyArg::Dense => {
                    if loss == LossObjective::Max {
                        return Err(Error::Config("dense optimization supports --loss rms only".into()));
                    }
                    optimize_dense_multi(&workload, schema, &config)?
                }
                StrategyArg::BandedToeplitz => {
                    let b = bands.ok_or_else(|| Error::Config("--bands is required for banded-toeplitz".into()))?;
                    optimize_banded_toeplitz(&workload, b, schema, &config)?
                }
                StrategyArg::Blt => optimize_blt(&workload, buffers, schema, &config)?,
            };
            let report = evaluate_loss(&workload, &result.strategy, schema)?;
            let mut meta = Map::new();
            meta.insert("workload".into(), serde_json::to_value(&workload).expect("serializable"));
            meta.insert("schema".into(), json!(schema.to_string()));
            meta.insert("loss".into(), json!(loss.to_string()));
            meta.insert("objective".into(), json!(result.objective));
            meta.insert("initial_objective".into(), json!(result.initial_objective));
            meta.insert("iterations".into(), json!(result.iterations));
            meta.insert("converged".into(), json!(result.converged));
            if let Some(c) = result.certificate {
                meta.insert("certificate".into(), json!(c));
            }
            meta.insert("losses".into(), serde_json::to_value(&report).expect("serializable"));
            meta.insert("tool_version".into(), json!(env!("CARGO_PKG_VERSION")));
            MechanismDescriptor::from_strategy(&result.strategy, Some(meta)).write_file(&out)?;
            if !result.converged {
                eprintln!("warning: optimizer did not converge after {} iterations", result.iterations);
                return Ok(ExitCode::from(EXIT_NUMERICAL));
            }
            eprintln!("objective {:.6} ({} iterations)", result.objective, result.iterations);
        }
        Command::Evaluate { mechanism, schema, workload, loss: _, mu, adjacency } => {
            let strategy = load(&mechanism)?;
            let workload = parse_workload(&workload, strategy.n)?;
            let mut report = evaluate_loss(&workload, &strategy, schema)?;
            if let Some(mu) = mu {
                report.calibrated_nu = Some(calibrate_nu(report.sensitivity, PrivacyTarget::new(mu, adjacency)?)?);
            }
            print_json(&report)?;
        }
        Command::Sensitivity { mechanism, schema, oracle } => {
            let strategy = load(&mechanism)?;
            let rep = strategy_sensitivity(&strategy, schema)?;
            let mut out = serde_json::to_value(&rep).expect("serializable");
            if oracle.is_some() {
                let brute = brute_sensitivity(&strategy, schema)?;
                out["oracle"] = json!(brute);
                out["oracle_agrees"] = json!((brute - rep.value).abs() <= 1e-10 * (1.0 + brute));
            }
            print_json(&out)?;
        }
        Command::Noise { mechanism, dim, steps, seed, nu, format, materialized, out } => {
            let strategy = load(&mechanism)?;
            if steps > strategy.n {
                return Err(Error::Config(format!("--steps {steps} exceeds mechanism length {}", strategy.n)));
            }
            if !(nu >= 0.0) {
                return Err(Error::Config(format!("--nu {nu} must be nonnegative")));
            }
            let source = NoiseSource::new(seed, nu, dim);
            let rows = if materialized {
                materialized_noise(&strategy, &source, steps)?
            } else {
                NoiseGenerator::new(&strategy, source)?.take_rows(steps)?
            };
            let bytes = encode_noise(&rows, format);
            match out {
                Some(path) => std::fs::write(&path, bytes).map_err(io_err)?,
                None => std::io::stdout().write_all(&bytes).map_err(io_err)?,
            }
        }
        Command::Table { name, steps, columns, dense_limit, full_h2_limit, buffers } => {
            let name: TableName = name.parse()?;
            let columns: Vec<Column> = match columns {
                Some(cs) => cs.iter().map(|c| c.parse()).collect::<corrnoise::Result<_>>()?,
                None => Column::ALL.to_vec(),
            };
            let opts = TableOptions { dense_limit, full_h2_limit, blt_buffers: buffers, ..TableOptions::default() };
            let table = compute_table(name, &steps, &columns, &opts)?;
            for note in &table.notes {
                eprintln!("note: {note}");
            }
            print!("{}", table.to_csv());
        }
        Command::Simulate {
            problem,
            mechanism,
            mu,
            nu,
            adjacency,
            schema,
            eta,
            clip,
            batch,
            steps,
            seeds,
            seed,
            dim,
            realizable,
            per_step_csv,
        } => {
            let strategy = load(&mechanism)?;
            let noise = match (mu, nu) {
                (Some(mu), None) => NoiseLevel::Mu(PrivacyTarget::new(mu, adjacency)?),
                (None, Some(nu)) => NoiseLevel::Nu(nu),
                _ => return Err(Error::Config("give exactly one of --mu or --nu".into())),
            };
            let problem = match problem {
                ProblemArg::Constant2d => SyntheticProblem::Constant2d,
                ProblemArg::Linreg => SyntheticProblem::LinReg {
                    eigenvalues: (0..dim).map(|i| 1.0 / (i + 1) as f64).collect(),
                    theta_star: vec![1.0; dim],
                    realizable,
                },
            };
            let config = DpsgdConfig { eta, zeta: clip, noise, batch, steps, seed };
            let summary = simulate(&problem, &strategy, schema, &config, seeds)?;
            if let Some(path) = per_step_csv {
                let mut csv = String::from("t,mean_sq_prefix_error\n");
                for (t, v) in summary.mean_per_step_prefix_error.iter().enumerate() {
                    csv.push_str(&format!("{t},{v:e}\n"));
                }
                std::fs::write(&path, csv).map_err(io_err)?;
            }
            print_json(&json!({
                "problem": problem,
                "mechanism": strategy.kind_name(),
                "schema": schema.to_string(),
                "config": config,
                "summary": summary,
            }))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Max over participation patterns of `max_{x ∈ [-1,1]^π} ‖C_π x‖₂`, by exhaustive search.
fn brute_sensitivity(strategy: &Strategy, schema: ParticipationSchema) -> corrnoise::Result<f64> {
    let c = strategy.materialize()?;
    let mut best = 0.0f64;
    for pattern in enumerate_patterns(schema, strategy.n)? {
        let sub = DMatrix::from_fn(c.nrows(), pattern.len(), |i, j| c[(i, pattern[j])]);
        best = best.max(inf_to_2_norm_bruteforce(&sub)?);
    }
    Ok(best)
}

fn encode_noise(rows: &DMatrix<f64>, format: NoiseFormat) -> Vec<u8> {
    let mut out = Vec::new();
    for row in rows.row_iter() {
        match format {
            NoiseFormat::Csv => {
                let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                out.extend_from_slice(line.join(",").as_bytes());
                out.push(b'\n');
            }
            NoiseFormat::F64le => row.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        }
    }
    out
}
