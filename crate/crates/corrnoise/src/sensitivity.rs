//! Participation-calibrated ℓ2 sensitivity of a strategy `C` (zero-out adjacency).

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::strategies::{Strategy, StrategyKind};
use crate::{Error, Result};

/// Patterns enumerated before the brute-force route gives up.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;
/// Gram entries at or above this count as nonnegative.
pub const NONNEG_TOL: f64 = -1e-12;

/// Which step sets a single example may contribute to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParticipationSchema {
    /// One participation anywhere.
    Single,
    /// `k` epochs of `b` steps; an example always lands on the same slot.
    Cyclic { b: usize, k: usize },
    /// At most `k` participations, any two at least `b` steps apart.
    MinSep { b: usize, k: usize },
    /// Every example in every step.
    Full,
}

impl ParticipationSchema {
    pub fn validate(&self, n: usize) -> Result<()> {
        match *self {
            Self::Single | Self::Full => Ok(()),
            Self::Cyclic { b, k } => {
                if b == 0 || k == 0 || b * k != n {
                    Err(Error::Schema(format!("cyclic({b},{k}) needs b·k = n = {n}")))
                } else {
                    Ok(())
                }
            }
            Self::MinSep { b, k } => {
                if b == 0 || k == 0 || (k - 1) * b >= n {
                    Err(Error::Schema(format!("minsep({b},{k}) needs b,k >= 1 and (k-1)·b < n = {n}")))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// `(separation, participations)` of the earliest pattern: the worst case
    /// for a nonnegative, nonincreasing Toeplitz `C`.
    pub fn shift_pattern(&self, n: usize) -> (usize, usize) {
        match *self {
            Self::Single => (n.max(1), 1),
            Self::Cyclic { b, k } | Self::MinSep { b, k } => (b, k),
            Self::Full => (1, n),
        }
    }
}

impl fmt::Display for ParticipationSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Single => write!(f, "single"),
            Self::Cyclic { b, k } => write!(f, "cyclic:{b},{k}"),
            Self::MinSep { b, k } => write!(f, "minsep:{b},{k}"),
            Self::Full => write!(f, "full"),
        }
    }
}

impl FromStr for ParticipationSchema {
    type Err = Error;

    /// Parses `single`, `full`, `cyclic:B,K` or `minsep:B,K`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "single" => return Ok(Self::Single),
            "full" => return Ok(Self::Full),
            _ => {}
        }
        let (name, args) = s.split_once(':').ok_or_else(|| Error::Config(format!("unknown schema '{s}'")))?;
        let nums: Vec<usize> = args
            .split(',')
            .map(|x| x.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("schema '{s}': {e}")))?;
        let [b, k] = nums[..] else {
            return Err(Error::Config(format!("schema '{s}' needs two integers B,K")));
        };
        match name {
            "cyclic" => Ok(Self::Cyclic { b, k }),
            "minsep" => Ok(Self::MinSep { b, k }),
            _ => Err(Error::Config(format!("unknown schema '{name}'"))),
        }
    }
}

/// `M = CᵀC` together with whether every entry is (numerically) nonnegative.
#[derive(Clone, Debug)]
pub struct GramMatrix {
    pub m: DMatrix<f64>,
    pub nonneg: bool,
}

impl GramMatrix {
    pub fn from_strategy_matrix(c: &DMatrix<f64>) -> Self {
        Self::from_gram(c.transpose() * c)
    }

    pub fn from_gram(m: DMatrix<f64>) -> Self {
        let nonneg = m.iter().all(|&x| x >= NONNEG_TOL);
        Self { m, nonneg }
    }

    pub fn n(&self) -> usize {
        self.m.nrows()
    }
}

/// Sensitivity value plus whether it is exact or only an upper bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityBound {
    pub value: f64,
    pub exact: bool,
}

/// Largest column norm of `C`: the single-participation sensitivity.
pub fn streaming_sensitivity(strategy: &Strategy) -> Result<f64> {
    strategy.validate()?;
    if let Some(col) = strategy.toeplitz_column() {
        return Ok(norm(&col));
    }
    match &strategy.kind {
        StrategyKind::Dense(c) => Ok(max_column_norm(c)),
        StrategyKind::Tree(variant) => Ok(crate::loss::tree_sensitivity_sq(strategy.n, *variant).sqrt()),
        _ => unreachable!("toeplitz kinds handled above"),
    }
}

pub fn max_column_norm(c: &DMatrix<f64>) -> f64 {
    c.column_iter().map(|col| col.norm()).fold(0.0, f64::max)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n.saturating_sub(k));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// Number of Min-Sep patterns with `1..=k` indices in `[n]`.
fn minsep_pattern_count(n: usize, b: usize, k: usize) -> u128 {
    // Choosing j indices with gaps >= b is choosing j from n - (j-1)(b-1).
    (1..=k)
        .map(|j| {
            let slack = (j - 1) * (b - 1);
            if slack >= n {
                0
            } else {
                binomial((n - slack) as u128, j as u128)
            }
        })
        .fold(0u128, u128::saturating_add)
}

/// All participation patterns of `schema` over `[n]`.
pub fn enumerate_patterns(schema: ParticipationSchema, n: usize) -> Result<Vec<Vec<usize>>> {
    schema.validate(n)?;
    match schema {
        ParticipationSchema::Single => Ok((0..n).map(|t| vec![t]).collect()),
        ParticipationSchema::Full => Ok(vec![(0..n).collect()]),
        ParticipationSchema::Cyclic { b, k } => Ok((0..b).map(|l| (0..k).map(|j| l + j * b).collect()).collect()),
        ParticipationSchema::MinSep { b, k } => {
            let count = minsep_pattern_count(n, b, k);
            if count > ENUMERATION_LIMIT {
                return Err(Error::EnumerationLimit { count, limit: ENUMERATION_LIMIT });
            }
            let mut out = Vec::with_capacity(count as usize);
            let mut current = Vec::with_capacity(k);
            fn rec(start: usize, n: usize, b: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
                for t in start..n {
                    cur.push(t);
                    out.push(cur.clone());
                    if cur.len() < k {
                        rec(t + b, n, b, k, cur, out);
                    }
                    cur.pop();
                }
            }
            rec(0, n, b, k, &mut current, &mut out);
            Ok(out)
        }
    }
}

/// `sqrt(max_π Σ_{t,τ∈π} |M[t,τ]|)`, exact when the Gram matrix is nonnegative.
pub fn sensitivity_upper_bound(gram: &GramMatrix, schema: ParticipationSchema) -> Result<SensitivityBound> {
    let patterns = enumerate_patterns(schema, gram.n())?;
    let best = patterns
        .iter()
        .map(|p| p.iter().flat_map(|&t| p.iter().map(move |&s| gram.m[(t, s)].abs())).sum::<f64>())
        .fold(0.0, f64::max);
    Ok(SensitivityBound { value: best.sqrt(), exact: gram.nonneg })
}

/// Min-Sep sensitivity for a `b̃`-banded `C` with `b̃ ≤ b`, from squared column norms.
///
/// `M[t, l] = max(r_t + M[t+b, l-1], M[t+1, l])`, out-of-range entries zero.
pub fn minsep_sensitivity_dp(column_sq_norms: &[f64], b: usize, k: usize) -> Result<f64> {
    let n = column_sq_norms.len();
    ParticipationSchema::MinSep { b, k }.validate(n)?;
    if let Some(r) = column_sq_norms.iter().find(|r| !(**r >= 0.0)) {
        return Err(Error::Domain(format!("negative reward {r}")));
    }
    // Rolling over l: prev[t] = M[t, l-1], cur[t] = M[t, l]; index n is the zero boundary.
    let mut prev = vec![0.0; n + 1];
    let mut cur = vec![0.0; n + 1];
    for _ in 0..k {
        cur[n] = 0.0;
        for t in (0..n).rev() {
            let take = column_sq_norms[t] + prev[(t + b).min(n)];
            cur[t] = take.max(cur[t + 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[0].sqrt())
}

/// `‖Σ_{j<k} shift(c, j·b)‖₂` for nonnegative, nonincreasing Toeplitz coefficients.
pub fn toeplitz_minsep_closed_form(coeffs: &[f64], b: usize, k: usize) -> Result<f64> {
    if coeffs.iter().any(|&c| c < 0.0) || coeffs.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::NotMonotone);
    }
    if b == 0 || k == 0 {
        return Err(Error::Schema("closed form needs b, k >= 1".into()));
    }
    Ok(norm(&shifted_sum(coeffs, b, k)))
}

/// `Σ_{j<k} shift(c, j·b)` truncated to `c.len()`.
pub(crate) fn shifted_sum(coeffs: &[f64], b: usize, k: usize) -> Vec<f64> {
    let n = coeffs.len();
    let mut s = vec![0.0; n];
    for j in 0..k {
        let off = j * b;
        if off >= n {
            break;
        }
        for (t, &c) in coeffs[..n - off].iter().enumerate() {
            s[t + off] += c;
        }
    }
    s
}

/// `max_{u ∈ {±1}^n} ‖C u‖₂`, by Gray-code enumeration of sign vectors.
pub fn inf_to_2_norm_bruteforce(c: &DMatrix<f64>) -> Result<f64> {
    let n = c.ncols();
    if n > 22 {
        return Err(Error::SizeLimit { n, limit: 22 });
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut v: DVector<f64> = c.column_sum();
    let mut signs = vec![1.0; n];
    let mut best = v.norm_squared();
    for i in 1u64..(1u64 << n) {
        let flip = i.trailing_zeros() as usize;
        signs[flip] = -signs[flip];
        v.axpy(2.0 * signs[flip], &c.column(flip), 1.0);
        best = best.max(v.norm_squared());
    }
    Ok(best.sqrt())
}

/// How [`strategy_sensitivity`] obtained its value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityMethod {
    ColumnNorm,
    ToeplitzClosedForm,
    BandedDp,
    Enumeration,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub value: f64,
    pub exact: bool,
    pub method: SensitivityMethod,
}

/// Sensitivity of `strategy` under `schema`, picking the cheapest exact route.
///
/// Order: column norm for single participation; the shifted-sum closed form for
/// nonnegative nonincreasing Toeplitz `C`; the banded DP for Min-Sep when the
/// bandwidth is at most the separation; otherwise pattern enumeration over the
/// Gram matrix (exact only when it is nonnegative).
pub fn strategy_sensitivity(strategy: &Strategy, schema: ParticipationSchema) -> Result<SensitivityReport> {
    strategy.validate()?;
    let n = strategy.n;
    schema.validate(n)?;
    if let StrategyKind::Tree(_) = strategy.kind {
        if schema != ParticipationSchema::Single {
            return Err(Error::Unsupported(format!("tree strategy under {schema} participation")));
        }
    }
    let report = |value, exact, method| Ok(SensitivityReport { value, exact, method });
    if schema == ParticipationSchema::Single {
        return report(streaming_sensitivity(strategy)?, true, SensitivityMethod::ColumnNorm);
    }
    if let Some(col) = strategy.toeplitz_column() {
        let (b, k) = schema.shift_pattern(n);
        if let Ok(v) = toeplitz_minsep_closed_form(&col, b, k) {
            return report(v, true, SensitivityMethod::ToeplitzClosedForm);
        }
    }
    if let ParticipationSchema::MinSep { b, k } = schema {
        if strategy.bandwidth().is_some_and(|bw| bw <= b) {
            let sq = column_sq_norms(strategy)?;
            return report(minsep_sensitivity_dp(&sq, b, k)?, true, SensitivityMethod::BandedDp);
        }
    }
    let gram = GramMatrix::from_strategy_matrix(&strategy.materialize()?);
    let bound = sensitivity_upper_bound(&gram, schema)?;
    report(bound.value, bound.exact, SensitivityMethod::Enumeration)
}

/// Squared column norms of a square strategy without building it for Toeplitz kinds.
pub fn column_sq_norms(strategy: &Strategy) -> Result<Vec<f64>> {
    if let Some(col) = strategy.toeplitz_column() {
        // Column j holds c_0..c_{n-1-j}.
        let n = col.len();
        let mut prefix = Vec::with_capacity(n);
        let mut acc = 0.0;
        for c in &col {
            acc += c * c;
            prefix.push(acc);
        }
        return Ok((0..n).map(|j| prefix[n - 1 - j]).collect());
    }
    let c = strategy.materialize()?;
    Ok(c.column_iter().map(|col| col.norm_squared()).collect())
}
