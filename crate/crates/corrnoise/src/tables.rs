//! Max-error and RMSE comparison tables for the prefix workload under single
//! participation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::loss::{column_normalized_toeplitz_prefix_loss, evaluate_loss};
use crate::optimizer::{
    optimize_banded_toeplitz, optimize_blt, optimize_dense_streaming, LossObjective, OptimizerConfig,
};
use crate::sensitivity::ParticipationSchema;
use crate::strategies::{Strategy, StrategyKind, TreeVariant};
use crate::workloads::WorkloadSpec;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableName {
    MaxError,
    Rmse,
}

impl TableName {
    pub fn loss(self) -> LossObjective {
        match self {
            Self::MaxError => LossObjective::Max,
            Self::Rmse => LossObjective::Rms,
        }
    }
}

impl FromStr for TableName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "max-error" | "max_error" => Ok(Self::MaxError),
            "rmse" => Ok(Self::Rmse),
            other => Err(Error::Config(format!("unknown table '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Column {
    Identity,
    Workload,
    StreamingH2,
    FullH2,
    Blt,
    Toeplitz,
    ColNorm,
    Dense,
}

impl Column {
    pub const ALL: [Column; 8] = [
        Self::Identity,
        Self::Workload,
        Self::StreamingH2,
        Self::FullH2,
        Self::Blt,
        Self::Toeplitz,
        Self::ColNorm,
        Self::Dense,
    ];

    pub fn header(self) -> &'static str {
        match self {
            Self::Identity => "Identity",
            Self::Workload => "Workload",
            Self::StreamingH2 => "Streaming H2",
            Self::FullH2 => "Full H2",
            Self::Blt => "BLT",
            Self::Toeplitz => "Toeplitz",
            Self::ColNorm => "Col-Norm. Toep.",
            Self::Dense => "Dense",
        }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.header())
    }
}

impl FromStr for Column {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.trim().to_ascii_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        match key.as_str() {
            "identity" => Ok(Self::Identity),
            "workload" => Ok(Self::Workload),
            "streamingh2" => Ok(Self::StreamingH2),
            "fullh2" => Ok(Self::FullH2),
            "blt" => Ok(Self::Blt),
            "toeplitz" => Ok(Self::Toeplitz),
            "colnorm" | "colnormtoep" | "colnormtoeplitz" => Ok(Self::ColNorm),
            "dense" => Ok(Self::Dense),
            _ => Err(Error::Config(format!("unknown column '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableOptions {
    /// Dense cells are left empty above this `n`.
    pub dense_limit: usize,
    /// Full H2 cells (an `n × n` Cholesky) are left empty above this `n`.
    pub full_h2_limit: usize,
    pub blt_buffers: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self { dense_limit: 256, full_h2_limit: 2048, blt_buffers: 4, optimizer: OptimizerConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: TableName,
    pub columns: Vec<Column>,
    /// `(n, cell per column)`; `None` where a cell was skipped.
    pub rows: Vec<(usize, Vec<Option<f64>>)>,
    /// Human-readable remarks about omitted columns or cells.
    pub notes: Vec<String>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n");
        for c in &self.columns {
            out.push(',');
            out.push_str(c.header());
        }
        out.push('\n');
        for (n, cells) in &self.rows {
            out.push_str(&n.to_string());
            for cell in cells {
                match cell {
                    Some(v) => out.push_str(&format!(",{v:.3}")),
                    None => out.push_str(",-"),
                }
            }
            out.push('\n');
        }
        out
    }
}

fn pick(name: TableName, max: f64, rms: f64) -> f64 {
    match name {
        TableName::MaxError => max,
        TableName::Rmse => rms,
    }
}

fn strategy_loss(name: TableName, strategy: &Strategy) -> Result<f64> {
    let r = evaluate_loss(&WorkloadSpec::prefix(strategy.n), strategy, ParticipationSchema::Single)?;
    Ok(pick(name, r.normalized_max_loss, r.normalized_rms_loss))
}

/// The Toeplitz strategy each table reports: the square-root factorization for max
/// error, the RMS-optimized full-width Toeplitz for RMSE.
pub fn table_toeplitz(name: TableName, n: usize, config: &OptimizerConfig) -> Result<Vec<f64>> {
    match name {
        TableName::MaxError => Ok(crate::strategies::optimal_toeplitz_coeffs(n)),
        TableName::Rmse => {
            let cfg = OptimizerConfig { loss: LossObjective::Rms, ..config.clone() };
            let r = optimize_banded_toeplitz(&WorkloadSpec::prefix(n), n, ParticipationSchema::Single, &cfg)?;
            match r.strategy.kind {
                StrategyKind::BandedToeplitz(mut c) => {
                    c.resize(n, 0.0);
                    Ok(c)
                }
                _ => unreachable!("banded optimizer returns banded Toeplitz"),
            }
        }
    }
}

/// One cell; `Ok(None)` when the column is skipped at this `n`.
pub fn table_cell(name: TableName, column: Column, n: usize, opts: &TableOptions) -> Result<Option<f64>> {
    let nf = n as f64;
    let value = match column {
        Column::Identity => pick(name, nf.sqrt(), ((nf + 1.0) / 2.0).sqrt()),
        // B = I and C = A: sensitivity √n, unit decoder error on every row.
        Column::Workload => nf.sqrt(),
        Column::StreamingH2 => return Ok(None),
        Column::FullH2 => {
            if n > opts.full_h2_limit {
                return Ok(None);
            }
            strategy_loss(name, &Strategy::tree(n, TreeVariant::FullPseudoinverse)?)?
        }
        Column::Blt => {
            let cfg = OptimizerConfig { loss: name.loss(), ..opts.optimizer.clone() };
            optimize_blt(&WorkloadSpec::prefix(n), opts.blt_buffers, ParticipationSchema::Single, &cfg)?.objective
        }
        Column::Toeplitz => strategy_loss(name, &Strategy::toeplitz(table_toeplitz(name, n, &opts.optimizer)?)?)?,
        Column::ColNorm => {
            let (max, rms) = column_normalized_toeplitz_prefix_loss(&table_toeplitz(name, n, &opts.optimizer)?)?;
            pick(name, max, rms)
        }
        Column::Dense => {
            if name == TableName::MaxError || n > opts.dense_limit {
                return Ok(None);
            }
            optimize_dense_streaming(&WorkloadSpec::prefix(n), &opts.optimizer)?.objective
        }
    };
    Ok(Some(value))
}

/// Builds a table. Columns that cannot be produced at all are dropped with a note.
pub fn compute_table(name: TableName, steps: &[usize], columns: &[Column], opts: &TableOptions) -> Result<Table> {
    if let Some(&bad) = steps.iter().find(|&&n| n == 0) {
        return Err(Error::Config(format!("invalid step count {bad}")));
    }
    let mut notes = Vec::new();
    let mut kept = Vec::new();
    for &c in columns {
        match (name, c) {
            (_, Column::StreamingH2) => notes.push("Streaming H2 is not implemented; column omitted".to_string()),
            (TableName::MaxError, Column::Dense) => notes
                .push("Dense optimization targets RMS loss only; column omitted from the max-error table".to_string()),
            _ => kept.push(c),
        }
    }
    let mut rows = Vec::with_capacity(steps.len());
    for &n in steps {
        let cells = kept.iter().map(|&c| table_cell(name, c, n, opts)).collect::<Result<Vec<_>>>()?;
        for (c, cell) in kept.iter().zip(&cells) {
            if cell.is_none() {
                notes.push(format!("{c} skipped at n = {n} (size limit)"));
            }
        }
        rows.push((n, cells));
    }
    Ok(Table { name, columns: kept, rows, notes })
}
