//! Max and RMS loss of a factorization `A = B C`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::sensitivity::{strategy_sensitivity, ParticipationSchema, SensitivityMethod};
use crate::strategies::{dyadic_partition, tree_nodes, Strategy, StrategyKind, TreeVariant};
use crate::workloads::WorkloadSpec;
use crate::{check_materialize, Error, Result};

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub sensitivity: f64,
    /// False when the sensitivity is only an upper bound (mixed-sign Gram matrix).
    pub sensitivity_exact: bool,
    pub sensitivity_method: SensitivityMethod,
    /// Largest row norm of `B`.
    pub max_error: f64,
    /// `‖B‖_F / √n`.
    pub rms_error: f64,
    pub normalized_max_loss: f64,
    pub normalized_rms_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub calibrated_nu: Option<f64>,
}

impl LossReport {
    fn new(sens: crate::sensitivity::SensitivityReport, max_error: f64, rms_error: f64) -> Self {
        Self {
            sensitivity: sens.value,
            sensitivity_exact: sens.exact,
            sensitivity_method: sens.method,
            max_error,
            rms_error,
            normalized_max_loss: sens.value * max_error,
            normalized_rms_loss: sens.value * rms_error,
            calibrated_nu: None,
        }
    }
}

/// Sensitivity, decoder errors and normalized losses of `(A, C)` under `schema`.
pub fn evaluate_loss(workload: &WorkloadSpec, strategy: &Strategy, schema: ParticipationSchema) -> Result<LossReport> {
    workload.validate()?;
    strategy.validate()?;
    if workload.n != strategy.n {
        return Err(Error::Shape { expected: workload.n, got: strategy.n });
    }
    let sens = strategy_sensitivity(strategy, schema)?;
    let (max_error, rms_error) = decoder_errors(workload, strategy)?;
    Ok(LossReport::new(sens, max_error, rms_error))
}

/// `(rownorm(B), ‖B‖_F/√n)` for `B = A C⁻¹` (or the explicit tree decoder).
pub fn decoder_errors(workload: &WorkloadSpec, strategy: &Strategy) -> Result<(f64, f64)> {
    let n = strategy.n;
    if let Some(inv) = strategy.inverse_toeplitz_column() {
        let b = workload.matvec(&inv?)?;
        return Ok(toeplitz_decoder_errors(&b));
    }
    match &strategy.kind {
        StrategyKind::Dense(c) => {
            let a = workload.materialize()?;
            let bt = c
                .transpose()
                .solve_upper_triangular(&a.transpose())
                .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
            Ok(row_errors(bt.column_iter().map(|col| col.norm_squared()), n))
        }
        StrategyKind::Tree(TreeVariant::Basic) => {
            if !workload.is_prefix() {
                return Err(Error::Unsupported("basic tree decoder for a non-prefix workload".into()));
            }
            Ok(row_errors((1..=n).map(|len| dyadic_partition(len).count() as f64), n))
        }
        StrategyKind::Tree(TreeVariant::FullPseudoinverse) => full_tree_errors(workload, n),
        _ => unreachable!("toeplitz kinds handled above"),
    }
}

fn row_errors(row_sq: impl Iterator<Item = f64>, n: usize) -> (f64, f64) {
    let (mut max, mut sum) = (0.0f64, 0.0);
    for r in row_sq {
        max = max.max(r);
        sum += r;
    }
    (max.sqrt(), (sum / n as f64).sqrt())
}

/// Errors of a Toeplitz decoder with first column `b`: the last row is the longest.
pub fn toeplitz_decoder_errors(b: &[f64]) -> (f64, f64) {
    let n = b.len();
    let max_sq: f64 = b.iter().map(|x| x * x).sum();
    let fro_sq: f64 = b.iter().enumerate().map(|(t, x)| (n - t) as f64 * x * x).sum();
    (max_sq.sqrt(), (fro_sq / n as f64).sqrt())
}

/// `(max_error, rms_error)` for Toeplitz workload coefficients `a` and Toeplitz strategy `c`.
pub fn toeplitz_fast_loss(workload_coeffs: &[f64], strategy_coeffs: &[f64]) -> Result<(f64, f64)> {
    if workload_coeffs.len() != strategy_coeffs.len() {
        return Err(Error::Shape { expected: workload_coeffs.len(), got: strategy_coeffs.len() });
    }
    let inv = crate::strategies::inverse_toeplitz_coeffs(strategy_coeffs)?;
    let b = crate::workloads::toeplitz_lower_matvec(workload_coeffs, &inv);
    Ok(toeplitz_decoder_errors(&b))
}

/// Row errors of `B = A_pre C⁺` for the full tree, via a Cholesky factor of `CᵀC`:
/// `‖B[t,:]‖² = a_tᵀ (CᵀC)⁻¹ a_t`.
fn full_tree_errors(workload: &WorkloadSpec, n: usize) -> Result<(f64, f64)> {
    check_materialize(n)?;
    let gram = tree_gram(n, TreeVariant::FullPseudoinverse);
    let chol = gram.cholesky().ok_or_else(|| Error::Singular("tree Gram matrix is not positive definite".into()))?;
    let a = workload.materialize()?;
    let mut y = a.transpose();
    chol.l_dirty().solve_lower_triangular_mut(&mut y);
    Ok(row_errors(y.column_iter().map(|col| col.norm_squared()), n))
}

/// `CᵀC` of a tree encoder: entry `(i, j)` counts kept nodes holding both leaves.
pub fn tree_gram(n: usize, variant: TreeVariant) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(n, n);
    for node in tree_nodes(n, variant) {
        let end = (node.start + node.len()).min(n);
        for i in node.start..end {
            for j in node.start..end {
                g[(i, j)] += 1.0;
            }
        }
    }
    g
}

/// Squared single-participation sensitivity of a tree: the most nodes over any leaf.
pub fn tree_sensitivity_sq(n: usize, variant: TreeVariant) -> f64 {
    let mut depth = vec![0u32; n];
    for node in tree_nodes(n, variant) {
        for d in &mut depth[node.start..(node.start + node.len()).min(n)] {
            *d += 1;
        }
    }
    depth.into_iter().max().unwrap_or(0) as f64
}

/// `(max_error, rms_error)` of the column-normalized Toeplitz strategy `C D⁻¹` for the
/// prefix workload, in `O(n²)` time and `O(n)` memory.
///
/// Row `t` of `B = A_pre D C⁻¹` is `Σ_{s≤t} d_s C⁻¹[s,:]`, accumulated as a running sum.
/// The normalized strategy has unit sensitivity, so these are also the losses.
pub fn column_normalized_toeplitz_prefix_loss(coeffs: &[f64]) -> Result<(f64, f64)> {
    let n = coeffs.len();
    let inv = crate::strategies::inverse_toeplitz_coeffs(coeffs)?;
    let mut prefix_sq = Vec::with_capacity(n);
    let mut acc = 0.0;
    for c in coeffs {
        acc += c * c;
        prefix_sq.push(acc);
    }
    let col_norm = |s: usize| prefix_sq[n - 1 - s].sqrt();
    let mut row = vec![0.0; n];
    let (mut max_sq, mut fro_sq) = (0.0f64, 0.0);
    for s in 0..n {
        let d = col_norm(s);
        if d == 0.0 {
            return Err(Error::Singular("zero column".into()));
        }
        // C⁻¹[s, j] = inv[s - j]
        for (j, r) in row[..=s].iter_mut().enumerate() {
            *r += d * inv[s - j];
        }
        let sq: f64 = row[..=s].iter().map(|x| x * x).sum();
        max_sq = max_sq.max(sq);
        fro_sq += sq;
    }
    Ok((max_sq.sqrt(), (fro_sq / n as f64).sqrt()))
}

/// Lower and upper bounds on the optimal max loss over all factorizations:
/// `ln(2n+1)/π` and `1 + ln(n)/π`.
pub fn dense_max_loss_bounds(n: usize) -> (f64, f64) {
    let n = n as f64;
    ((2.0 * n + 1.0).ln() / PI, 1.0 + n.ln() / PI)
}

/// Upper bound `(γ + ln n)/π + 1` on the square-root Toeplitz max loss.
pub fn toeplitz_max_loss_bound(n: usize) -> f64 {
    (EULER_GAMMA + (n as f64).ln()) / PI + 1.0
}

/// Upper bound `ln(n)/π + 1` on the column-normalized square-root Toeplitz max loss.
pub fn column_normalized_max_loss_bound(n: usize) -> f64 {
    (n as f64).ln() / PI + 1.0
}

/// Upper bound `√(h(h+1))`, `h = ⌈log2 n⌉`, on the basic tree max loss.
pub fn tree_max_loss_bound(n: usize) -> f64 {
    let h = crate::strategies::tree_height(n) as f64;
    (h * (h + 1.0)).sqrt()
}

/// Closed-form quantities of a BLT strategy for the prefix workload, in `O(d²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BltClosedForm {
    /// Squared column norm `‖c‖²`: the single-participation sensitivity squared.
    pub sensitivity_sq: f64,
    /// `rownorm(B)²` for `B = A_pre C⁻¹`.
    pub max_error_sq: f64,
    /// `‖B‖_F²`.
    pub frobenius_sq: f64,
}

/// `Σ_{t<m} x^t`.
fn geo(x: f64, m: usize) -> f64 {
    if (1.0 - x).abs() < 1e-12 {
        m as f64
    } else {
        (1.0 - x.powi(m as i32)) / (1.0 - x)
    }
}

/// `Σ_{t<n} (n-t) x^t`.
fn weighted_geo(x: f64, n: usize) -> f64 {
    let nf = n as f64;
    if (1.0 - x).abs() < 1e-12 {
        nf * (nf + 1.0) / 2.0
    } else {
        (nf * (1.0 - x) - x * (1.0 - x.powi(n as i32))) / (1.0 - x).powi(2)
    }
}

/// Sensitivity and prefix errors of `BLT(α, λ)` from its parameters and those of its inverse.
///
/// With `b_t = 1 + Σ α̂_i (1 - λ̂_i^t)/(1 - λ̂_i)` the decoder column, the error sums
/// `Σ_t b_t²` and `Σ_t (n-t) b_t²` expand into geometric series in `λ̂_i λ̂_j`.
pub fn blt_closed_form(alpha: &[f64], lambda: &[f64], n: usize) -> Result<BltClosedForm> {
    if n == 0 {
        return Err(Error::Domain("n must be positive".into()));
    }
    let d = alpha.len();
    let mut sens = 1.0;
    for i in 0..d {
        for j in 0..d {
            sens += alpha[i] * alpha[j] * geo(lambda[i] * lambda[j], n - 1);
        }
    }
    let inv = crate::strategies::blt_invert(alpha, lambda)?;
    let (ah, lh) = (&inv.alpha_hat, &inv.lambda_hat);
    let nf = n as f64;
    let tri = nf * (nf + 1.0) / 2.0;
    let (mut max_sq, mut fro_sq) = (nf, tri);
    for i in 0..d {
        let xi = lh[i];
        let (gi, si) = (geo(xi, n), weighted_geo(xi, n));
        max_sq += 2.0 * ah[i] * (nf - gi) / (1.0 - xi);
        fro_sq += 2.0 * ah[i] * (tri - si) / (1.0 - xi);
        for j in 0..d {
            let xj = lh[j];
            let denom = (1.0 - xi) * (1.0 - xj);
            let gj = geo(xj, n);
            max_sq += ah[i] * ah[j] * (nf - gi - gj + geo(xi * xj, n)) / denom;
            fro_sq += ah[i] * ah[j] * (tri - si - weighted_geo(xj, n) + weighted_geo(xi * xj, n)) / denom;
        }
    }
    Ok(BltClosedForm { sensitivity_sq: sens, max_error_sq: max_sq, frobenius_sq: fro_sq })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategies::{column_normalize, optimal_toeplitz_coeffs, tree_factorization};
    use approx::assert_relative_eq;

    fn single(strategy: &Strategy) -> LossReport {
        evaluate_loss(&WorkloadSpec::prefix(strategy.n), strategy, ParticipationSchema::Single).unwrap()
    }

    #[test]
    fn baseline_losses_at_n8() {
        let id = single(&Strategy::identity(8));
        assert!((id.normalized_max_loss - 2.828).abs() < 5e-4);
        assert!((id.normalized_rms_loss - 2.121).abs() < 5e-4);
        let w = single(&Strategy::toeplitz(vec![1.0; 8]).unwrap());
        assert!((w.normalized_max_loss - 2.828).abs() < 5e-4);
        assert!((w.normalized_rms_loss - 2.828).abs() < 5e-4);
        let opt = single(&Strategy::optimal_toeplitz(8));
        assert!((opt.normalized_max_loss - 1.718).abs() < 5e-4);
        // The square-root factorization's RMS loss.
        assert!((opt.normalized_rms_loss - 1.586).abs() < 5e-4);
    }

    #[test]
    fn fast_loss_examples() {
        let (max, rms) = toeplitz_fast_loss(&[1.0; 8], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(max, 8f64.sqrt(), epsilon = 1e-14);
        assert!((rms - 2.121).abs() < 5e-4);
        let (max, rms) = toeplitz_fast_loss(&[1.0; 5], &[1.0; 5]).unwrap();
        assert_relative_eq!(max, 1.0, epsilon = 1e-15);
        assert_relative_eq!(rms, 1.0, epsilon = 1e-15);
        let c = optimal_toeplitz_coeffs(16);
        let (max, _) = toeplitz_fast_loss(&[1.0; 16], &c).unwrap();
        let sens: f64 = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((max * sens - 1.944).abs() < 5e-4);
    }

    #[test]
    fn dense_path_matches_fast_path() {
        let c = optimal_toeplitz_coeffs(40);
        let fast = single(&Strategy::toeplitz(c.clone()).unwrap());
        let dense = single(&Strategy::dense(crate::workloads::toeplitz_lower(&c)).unwrap());
        assert_relative_eq!(fast.max_error, dense.max_error, max_relative = 1e-10);
        assert_relative_eq!(fast.rms_error, dense.rms_error, max_relative = 1e-10);
    }

    #[test]
    fn column_normalized_streaming_matches_dense() {
        let c = optimal_toeplitz_coeffs(24);
        let dense = single(&column_normalize(&Strategy::toeplitz(c.clone()).unwrap()).unwrap());
        let (max, rms) = column_normalized_toeplitz_prefix_loss(&c).unwrap();
        assert_relative_eq!(dense.sensitivity, 1.0, epsilon = 1e-12);
        assert_relative_eq!(max, dense.max_error, max_relative = 1e-10);
        assert_relative_eq!(rms, dense.rms_error, max_relative = 1e-10);
        let (max8, _) = column_normalized_toeplitz_prefix_loss(&optimal_toeplitz_coeffs(8)).unwrap();
        assert!((max8 - 1.573).abs() < 5e-3);
    }

    #[test]
    fn tree_losses_match_materialized_factorization() {
        for n in [1, 4, 7, 16] {
            for variant in [TreeVariant::Basic, TreeVariant::FullPseudoinverse] {
                let f = tree_factorization(n, variant).unwrap();
                let rep = single(&Strategy::tree(n, variant).unwrap());
                let rows: Vec<f64> = f.b.row_iter().map(|r| r.norm_squared()).collect();
                let max = rows.iter().cloned().fold(0.0, f64::max).sqrt();
                let rms = (rows.iter().sum::<f64>() / n as f64).sqrt();
                let sens = f.c.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
                assert_relative_eq!(rep.max_error, max, max_relative = 1e-10);
                assert_relative_eq!(rep.rms_error, rms, max_relative = 1e-10);
                assert_relative_eq!(rep.sensitivity, sens, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn bound_formulas() {
        let (lo, hi) = dense_max_loss_bounds(8);
        assert!((lo - 0.9018).abs() < 1e-4 && (hi - 1.6619).abs() < 1e-4);
        let (lo, hi) = dense_max_loss_bounds(1);
        assert!((lo - 3f64.ln() / PI).abs() < 1e-15 && hi == 1.0);
        assert!((toeplitz_max_loss_bound(8) - 1.8456).abs() < 1e-4);
        assert!((toeplitz_max_loss_bound(1) - 1.1837).abs() < 1e-4);
    }

    #[test]
    fn tree_with_multi_participation_is_rejected() {
        let tree = Strategy::tree(8, TreeVariant::Basic).unwrap();
        let err = evaluate_loss(&WorkloadSpec::prefix(8), &tree, ParticipationSchema::Cyclic { b: 4, k: 2 });
        assert!(matches!(err, Err(Error::Unsupported(_))));
    }

    #[test]
    fn blt_closed_form_matches_direct() {
        let cf = blt_closed_form(&[0.5], &[0.5], 3).unwrap();
        assert_relative_eq!(cf.sensitivity_sq, 1.3125, epsilon = 1e-15);
        for (alpha, lambda, n) in
            [(vec![0.3, 0.2], vec![0.9, 0.4], 17), (vec![0.1, 0.05, 0.2], vec![0.99, 0.7, 0.2], 64)]
        {
            let cf = blt_closed_form(&alpha, &lambda, n).unwrap();
            let s = Strategy::blt(n, alpha, lambda).unwrap();
            let r = single(&s);
            assert_relative_eq!(cf.sensitivity_sq, r.sensitivity.powi(2), max_relative = 1e-12);
            assert_relative_eq!(cf.max_error_sq, r.max_error.powi(2), max_relative = 1e-9);
            assert_relative_eq!(cf.frobenius_sq, r.rms_error.powi(2) * n as f64, max_relative = 1e-9);
        }
    }
}
