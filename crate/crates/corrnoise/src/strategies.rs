//! Strategy (encoder) matrices `C` and their canonical constructions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::workloads::toeplitz_lower;
use crate::{check_materialize, Error, Result};

/// Below this separation two decay parameters are treated as coincident.
pub const DEGENERACY_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeVariant {
    /// Each prefix is answered from its maximal dyadic partition.
    Basic,
    /// Least-squares decoder `A_pre C⁺`.
    FullPseudoinverse,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StrategyKind {
    /// Lower-triangular `C`.
    Dense(DMatrix<f64>),
    /// Full first column of a Toeplitz `C`.
    Toeplitz(Vec<f64>),
    /// The first `b` diagonals of a banded Toeplitz `C`.
    BandedToeplitz(Vec<f64>),
    /// `c_0 = 1`, `c_t = Σ α_i λ_i^{t-1}`.
    Blt {
        alpha: Vec<f64>,
        lambda: Vec<f64>,
    },
    Tree(TreeVariant),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Strategy {
    pub n: usize,
    pub kind: StrategyKind,
}

/// Parameters of `C⁻¹ = BLT(α̂, λ̂)`; `α̂` is signed (nonpositive for valid BLTs).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverseBltParams {
    pub alpha_hat: Vec<f64>,
    pub lambda_hat: Vec<f64>,
}

impl Strategy {
    pub fn identity(n: usize) -> Self {
        Self { n, kind: StrategyKind::BandedToeplitz(vec![1.0]) }
    }

    pub fn dense(c: DMatrix<f64>) -> Result<Self> {
        let s = Self { n: c.nrows(), kind: StrategyKind::Dense(c) };
        s.validate()?;
        Ok(s)
    }

    pub fn toeplitz(coeffs: Vec<f64>) -> Result<Self> {
        let s = Self { n: coeffs.len(), kind: StrategyKind::Toeplitz(coeffs) };
        s.validate()?;
        Ok(s)
    }

    pub fn banded(n: usize, coeffs: Vec<f64>) -> Result<Self> {
        let s = Self { n, kind: StrategyKind::BandedToeplitz(coeffs) };
        s.validate()?;
        Ok(s)
    }

    pub fn blt(n: usize, alpha: Vec<f64>, lambda: Vec<f64>) -> Result<Self> {
        let s = Self { n, kind: StrategyKind::Blt { alpha, lambda } };
        s.validate()?;
        Ok(s)
    }

    pub fn tree(n: usize, variant: TreeVariant) -> Result<Self> {
        let s = Self { n, kind: StrategyKind::Tree(variant) };
        s.validate()?;
        Ok(s)
    }

    /// The square-root factorization of the prefix workload.
    pub fn optimal_toeplitz(n: usize) -> Self {
        Self { n, kind: StrategyKind::Toeplitz(optimal_toeplitz_coeffs(n)) }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            StrategyKind::Dense(_) => "dense",
            StrategyKind::Toeplitz(_) => "toeplitz",
            StrategyKind::BandedToeplitz(_) => "banded_toeplitz",
            StrategyKind::Blt { .. } => "blt",
            StrategyKind::Tree(_) => "tree",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Domain("strategy needs n >= 1".into()));
        }
        match &self.kind {
            StrategyKind::Dense(c) => {
                if !c.is_square() || c.nrows() != self.n {
                    return Err(Error::Shape { expected: self.n, got: c.nrows() });
                }
                for t in 0..self.n {
                    if c[(t, t)] == 0.0 {
                        return Err(Error::Singular(format!("zero diagonal entry at {t}")));
                    }
                    if (t + 1..self.n).any(|s| c[(t, s)] != 0.0) {
                        return Err(Error::Domain(format!("row {t} has entries above the diagonal")));
                    }
                }
            }
            StrategyKind::Toeplitz(c) => {
                if c.len() != self.n {
                    return Err(Error::Shape { expected: self.n, got: c.len() });
                }
                if c[0] == 0.0 {
                    return Err(Error::Singular("c_0 = 0".into()));
                }
            }
            StrategyKind::BandedToeplitz(c) => {
                if c.is_empty() || c.len() > self.n {
                    return Err(Error::Domain(format!("band count {} must lie in 1..={}", c.len(), self.n)));
                }
                if c[0] == 0.0 {
                    return Err(Error::Singular("c_0 = 0".into()));
                }
            }
            StrategyKind::Blt { alpha, lambda } => {
                if alpha.len() != lambda.len() {
                    return Err(Error::Shape { expected: alpha.len(), got: lambda.len() });
                }
                if let Some(a) = alpha.iter().find(|a| !(**a > 0.0)) {
                    return Err(Error::Domain(format!("BLT scale {a} is not positive")));
                }
                if let Some(l) = lambda.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
                    return Err(Error::Domain(format!("BLT decay {l} is outside (0, 1)")));
                }
                check_distinct(lambda)?;
            }
            StrategyKind::Tree(_) => {}
        }
        Ok(())
    }

    /// Full first column when `C` is Toeplitz (toeplitz, banded and BLT kinds).
    pub fn toeplitz_column(&self) -> Option<Vec<f64>> {
        match &self.kind {
            StrategyKind::Toeplitz(c) => Some(c.clone()),
            StrategyKind::BandedToeplitz(c) => {
                let mut col = c.clone();
                col.resize(self.n, 0.0);
                Some(col)
            }
            StrategyKind::Blt { alpha, lambda } => Some(blt_coeffs(alpha, lambda, self.n)),
            _ => None,
        }
    }

    /// Number of nonzero diagonals of a Toeplitz-kind `C`.
    pub fn bandwidth(&self) -> Option<usize> {
        match &self.kind {
            StrategyKind::BandedToeplitz(c) => Some(c.len()),
            StrategyKind::Toeplitz(_) | StrategyKind::Blt { .. } => Some(self.n),
            StrategyKind::Dense(c) => Some(dense_bandwidth(c)),
            StrategyKind::Tree(_) => None,
        }
    }

    /// First column of `C⁻¹` for Toeplitz kinds, in `O(n·bands)` (`O(n·d)` for BLTs).
    pub fn inverse_toeplitz_column(&self) -> Option<Result<Vec<f64>>> {
        match &self.kind {
            StrategyKind::Toeplitz(c) | StrategyKind::BandedToeplitz(c) => Some(toeplitz_inverse_column(c, self.n)),
            StrategyKind::Blt { alpha, lambda } => Some(Ok(blt_inverse_column(alpha, lambda, self.n))),
            _ => None,
        }
    }

    /// Dense `C`. Trees return their `(#nodes) × n` encoder.
    pub fn materialize(&self) -> Result<DMatrix<f64>> {
        check_materialize(self.n)?;
        self.validate()?;
        match &self.kind {
            StrategyKind::Dense(c) => Ok(c.clone()),
            StrategyKind::Tree(variant) => Ok(tree_factorization(self.n, *variant)?.c),
            _ => Ok(toeplitz_lower(&self.toeplitz_column().expect("toeplitz kind"))),
        }
    }

    /// Dense `C⁻¹` (square kinds only).
    pub fn materialize_inverse(&self) -> Result<DMatrix<f64>> {
        check_materialize(self.n)?;
        if let Some(col) = self.inverse_toeplitz_column() {
            return Ok(toeplitz_lower(&col?));
        }
        match &self.kind {
            StrategyKind::Dense(c) => {
                let eye = DMatrix::identity(self.n, self.n);
                c.solve_lower_triangular(&eye).ok_or_else(|| Error::Singular("triangular solve failed".into()))
            }
            _ => Err(Error::Unsupported("a tree encoder has no square inverse".into())),
        }
    }

    pub fn blt_inverse(&self) -> Option<Result<InverseBltParams>> {
        match &self.kind {
            StrategyKind::Blt { alpha, lambda } => Some(blt_invert(alpha, lambda)),
            _ => None,
        }
    }
}

fn dense_bandwidth(c: &DMatrix<f64>) -> usize {
    let n = c.nrows();
    let mut bw = 1;
    for t in 0..n {
        for s in 0..t {
            if c[(t, s)] != 0.0 {
                bw = bw.max(t - s + 1);
                break;
            }
        }
    }
    bw
}

fn check_distinct(values: &[f64]) -> Result<()> {
    for i in 0..values.len() {
        for j in 0..i {
            if (values[i] - values[j]).abs() < DEGENERACY_TOL {
                return Err(Error::Degenerate(format!(
                    "values {} and {} coincide within {DEGENERACY_TOL:e}",
                    values[j], values[i]
                )));
            }
        }
    }
    Ok(())
}

/// First column of the lower-triangular Toeplitz square root of the prefix workload:
/// `c_0 = 1`, `c_t = (2t-1)/(2t) · c_{t-1}`.
pub fn optimal_toeplitz_coeffs(n: usize) -> Vec<f64> {
    let mut c = Vec::with_capacity(n);
    let mut prev = 1.0;
    for t in 0..n {
        if t > 0 {
            prev *= (2 * t - 1) as f64 / (2 * t) as f64;
        }
        c.push(prev);
    }
    c
}

/// First column of `C⁻¹` for Toeplitz `C`, by power-series inversion.
pub fn inverse_toeplitz_coeffs(coeffs: &[f64]) -> Result<Vec<f64>> {
    toeplitz_inverse_column(coeffs, coeffs.len())
}

/// Inverse column of length `n` for a (possibly banded) Toeplitz first column `c`.
pub fn toeplitz_inverse_column(c: &[f64], n: usize) -> Result<Vec<f64>> {
    let c0 = *c.first().ok_or_else(|| Error::Singular("empty coefficients".into()))?;
    if c0 == 0.0 {
        return Err(Error::Singular("c_0 = 0".into()));
    }
    let mut inv = vec![0.0; n];
    if n == 0 {
        return Ok(inv);
    }
    inv[0] = 1.0 / c0;
    for t in 1..n {
        let hi = t.min(c.len() - 1);
        let acc: f64 = (1..=hi).map(|s| c[s] * inv[t - s]).sum();
        inv[t] = -acc / c0;
    }
    Ok(inv)
}

/// `c_0 = 1`, `c_t = Σ_i α_i λ_i^{t-1}` for `1 ≤ t < n`.
pub fn blt_coeffs(alpha: &[f64], lambda: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n];
    if n == 0 {
        return c;
    }
    c[0] = 1.0;
    let mut pow = vec![1.0; lambda.len()];
    for ct in c.iter_mut().skip(1) {
        *ct = alpha.iter().zip(&pow).map(|(a, p)| a * p).sum();
        for (p, l) in pow.iter_mut().zip(lambda) {
            *p *= l;
        }
    }
    c
}

/// First column of `BLT(α, λ)⁻¹` via the buffered recurrence, `O(n·d)`.
pub fn blt_inverse_column(alpha: &[f64], lambda: &[f64], n: usize) -> Vec<f64> {
    let mut buf = vec![0.0; alpha.len()];
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let z = if t == 0 { 1.0 } else { 0.0 };
        let zt = z - alpha.iter().zip(&buf).map(|(a, m)| a * m).sum::<f64>();
        for (m, l) in buf.iter_mut().zip(lambda) {
            *m = *m * l + zt;
        }
        out.push(zt);
    }
    out
}

/// Parameters of `BLT(α, λ)⁻¹`.
///
/// The inverse decays `λ̂` are the roots of `Π_j (y - λ_j) + Σ_i α_i Π_{j≠i} (y - λ_j)`,
/// i.e. of `f(y) = 1 + Σ_i α_i / (y - λ_i)`. With `α > 0` they interlace the sorted
/// decays: one root in each gap `(λ_(i), λ_(i+1))` and one in `[λ_(1) - Σα, λ_(1))`.
/// Each is found by bisection on `f` inside its bracket. `α̂` then follows from
/// [`calc_output_scale`].
pub fn blt_invert(alpha: &[f64], lambda: &[f64]) -> Result<InverseBltParams> {
    if alpha.len() != lambda.len() {
        return Err(Error::Shape { expected: alpha.len(), got: lambda.len() });
    }
    if let Some(a) = alpha.iter().find(|a| !(**a > 0.0)) {
        return Err(Error::Domain(format!("BLT scale {a} is not positive")));
    }
    if let Some(l) = lambda.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
        return Err(Error::Domain(format!("BLT decay {l} is outside (0, 1)")));
    }
    check_distinct(lambda)?;
    if alpha.is_empty() {
        return Ok(InverseBltParams { alpha_hat: vec![], lambda_hat: vec![] });
    }

    let mut sorted = lambda.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let total: f64 = alpha.iter().sum();
    let secular = |y: f64| 1.0 + alpha.iter().zip(lambda).map(|(a, l)| a / (y - l)).sum::<f64>();
    let mut roots: Vec<f64> = std::iter::once((sorted[0] - total, sorted[0]))
        .chain(sorted.windows(2).map(|w| (w[0], w[1])))
        .map(|(mut lo, mut hi)| loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break mid;
            }
            if secular(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        })
        .collect();
    roots.sort_by(|a, b| b.total_cmp(a));
    check_distinct(&roots)?;
    let alpha_hat = roots
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let num: f64 = lambda.iter().map(|&l| r - l).product();
            let den: f64 = roots.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &q)| r - q).product();
            num / den
        })
        .collect();
    Ok(InverseBltParams { alpha_hat, lambda_hat: roots })
}

/// Scales `(α, α̂)` of a BLT and its inverse from the two decay vectors:
/// `α_i = Π_j (λ_i - λ̂_j) / Π_{j≠i} (λ_i - λ_j)` and symmetrically for `α̂`.
///
/// Only pairwise distinctness of all `2d` values is required. Whether the decays
/// interlace (which decides positivity of `α`) is not checked.
pub fn calc_output_scale(lambda: &[f64], lambda_hat: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if lambda.len() != lambda_hat.len() {
        return Err(Error::Shape { expected: lambda.len(), got: lambda_hat.len() });
    }
    let all: Vec<f64> = lambda.iter().chain(lambda_hat).copied().collect();
    check_distinct(&all)?;
    let scale = |own: &[f64], other: &[f64]| -> Vec<f64> {
        own.iter()
            .enumerate()
            .map(|(i, &x)| {
                let num: f64 = other.iter().map(|&y| x - y).product();
                let den: f64 = own.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &y)| x - y).product();
                num / den
            })
            .collect()
    };
    Ok((scale(lambda, lambda_hat), scale(lambda_hat, lambda)))
}

/// A dyadic tree node covering leaves `[start, start + 2^level)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TreeNode {
    pub level: u32,
    pub start: usize,
}

impl TreeNode {
    pub fn len(&self) -> usize {
        1 << self.level
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Post-order index in the padded tree. Independent of the padding height,
    /// so real leaves keep their index whatever `n` is.
    pub fn post_order_index(&self) -> u64 {
        let s = self.start as u64;
        2 * s - u64::from(s.count_ones()) + (1u64 << (self.level + 1)) - 2
    }
}

/// Height of the tree over `n` leaves padded to a power of two.
pub fn tree_height(n: usize) -> u32 {
    n.max(1).next_power_of_two().trailing_zeros()
}

/// Maximal dyadic partition of the prefix `[0, len)`, largest block first.
pub fn dyadic_partition(len: usize) -> impl Iterator<Item = TreeNode> {
    let bits = usize::BITS - len.leading_zeros();
    let mut start = 0;
    (0..bits).rev().filter_map(move |level| {
        if len & (1 << level) != 0 {
            let node = TreeNode { level, start };
            start += 1 << level;
            Some(node)
        } else {
            None
        }
    })
}

/// Nodes kept by a tree variant, ordered by post-order index.
pub fn tree_nodes(n: usize, variant: TreeVariant) -> Vec<TreeNode> {
    let mut nodes: Vec<TreeNode> = match variant {
        TreeVariant::Basic => {
            let mut set = std::collections::BTreeSet::new();
            for len in 1..=n {
                set.extend(dyadic_partition(len));
            }
            set.into_iter().collect()
        }
        TreeVariant::FullPseudoinverse => (0..=tree_height(n))
            .flat_map(|level| (0..n).step_by(1 << level).map(move |start| TreeNode { level, start }))
            .collect(),
    };
    nodes.sort_by_key(TreeNode::post_order_index);
    nodes
}

#[derive(Clone, Debug)]
pub struct TreeFactorization {
    /// `n × (#nodes)` decoder.
    pub b: DMatrix<f64>,
    /// `(#nodes) × n` encoder; row `j` is the leaf indicator of `nodes[j]`.
    pub c: DMatrix<f64>,
    pub nodes: Vec<TreeNode>,
}

/// Tree aggregation as a factorization of the prefix workload.
///
/// `Basic` keeps only nodes used by some prefix partition (right children and
/// nodes beyond `n` never are). `FullPseudoinverse` keeps every node touching a
/// real leaf and decodes with `A_pre C⁺ = A_pre (CᵀC)⁻¹ Cᵀ`.
pub fn tree_factorization(n: usize, variant: TreeVariant) -> Result<TreeFactorization> {
    if n == 0 {
        return Err(Error::Domain("tree needs n >= 1".into()));
    }
    check_materialize(n)?;
    let nodes = tree_nodes(n, variant);
    let index: std::collections::HashMap<TreeNode, usize> =
        nodes.iter().enumerate().map(|(j, node)| (*node, j)).collect();
    let mut c = DMatrix::zeros(nodes.len(), n);
    for (j, node) in nodes.iter().enumerate() {
        for leaf in node.start..(node.start + node.len()).min(n) {
            c[(j, leaf)] = 1.0;
        }
    }
    let b = match variant {
        TreeVariant::Basic => {
            let mut b = DMatrix::zeros(n, nodes.len());
            for t in 0..n {
                for node in dyadic_partition(t + 1) {
                    b[(t, index[&node])] = 1.0;
                }
            }
            b
        }
        TreeVariant::FullPseudoinverse => {
            let gram = c.transpose() * &c;
            let chol =
                gram.cholesky().ok_or_else(|| Error::Singular("tree Gram matrix is not positive definite".into()))?;
            // B = A_pre G⁻¹ Cᵀ; rows of A_pre G⁻¹ are running sums of rows of G⁻¹.
            let mut ginv = chol.inverse();
            for t in 1..n {
                for s in 0..n {
                    ginv[(t, s)] += ginv[(t - 1, s)];
                }
            }
            ginv * c.transpose()
        }
    };
    Ok(TreeFactorization { b, c, nodes })
}

/// Rescales every column of `C` to unit norm.
pub fn column_normalize(strategy: &Strategy) -> Result<Strategy> {
    if matches!(strategy.kind, StrategyKind::Tree(_)) {
        return Err(Error::Unsupported("column normalization of a tree encoder".into()));
    }
    let mut c = strategy.materialize()?;
    for mut col in c.column_iter_mut() {
        let norm = col.norm();
        if norm == 0.0 {
            return Err(Error::Singular("zero column".into()));
        }
        col /= norm;
    }
    Strategy::dense(c)
}

/// Block-diagonal `diag(C, …, C)` with `k` copies: the mechanism restarted every `n` steps.
pub fn restart_strategy(strategy: &Strategy, k: usize) -> Result<Strategy> {
    if k == 0 {
        return Err(Error::Domain("restart count must be >= 1".into()));
    }
    if matches!(strategy.kind, StrategyKind::Tree(_)) {
        return Err(Error::Unsupported("restarting a tree encoder".into()));
    }
    if k == 1 {
        return Ok(strategy.clone());
    }
    let n = strategy.n;
    check_materialize(n * k)?;
    let c = strategy.materialize()?;
    let mut big = DMatrix::zeros(n * k, n * k);
    for block in 0..k {
        big.view_mut((block * n, block * n), (n, n)).copy_from(&c);
    }
    Strategy::dense(big)
}
