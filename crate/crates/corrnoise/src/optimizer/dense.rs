//! RMS-optimal dense strategies via the Gram matrix `M = CᵀC`.
//!
//! Minimizes `tr(A M⁻¹ Aᵀ)` over symmetric `M` with structural constraints that pin
//! the sensitivity. Positive definiteness is not imposed; points where the Cholesky
//! factorization fails are treated as infeasible by the line search.

use nalgebra::DMatrix;

use super::{minimize_smooth, OptimizationResult, OptimizerConfig};
use crate::sensitivity::ParticipationSchema;
use crate::strategies::Strategy;
use crate::workloads::WorkloadSpec;
use crate::{check_materialize, Error, Result};

/// Which entries of `M` are free, and how the diagonal behaves.
struct Layout {
    n: usize,
    /// Free strictly-lower entries `(row, col)`.
    off: Vec<(usize, usize)>,
    /// `Some(groups)`: the diagonal is free with the sum over each group pinned.
    diag_groups: Option<Vec<Vec<usize>>>,
    /// Fixed diagonal (used when `diag_groups` is `None`) or the start diagonal.
    diag0: Vec<f64>,
    /// Largest pattern size, i.e. `sens²` at any feasible point.
    sens_sq: f64,
}

impl Layout {
    fn dim(&self) -> usize {
        self.off.len() + if self.diag_groups.is_some() { self.n } else { 0 }
    }

    fn x0(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.off.len()];
        if self.diag_groups.is_some() {
            x.extend_from_slice(&self.diag0);
        }
        x
    }

    fn gram(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let mut m = DMatrix::zeros(n, n);
        let diag = if self.diag_groups.is_some() { &x[self.off.len()..] } else { &self.diag0[..] };
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = *d;
        }
        for (&(i, j), v) in self.off.iter().zip(x) {
            m[(i, j)] = *v;
            m[(j, i)] = *v;
        }
        m
    }

    /// Zero-mean projection of the diagonal gradient within each group.
    fn project(&self, g: &mut [f64]) {
        if let Some(groups) = &self.diag_groups {
            let diag = &mut g[self.off.len()..];
            for grp in groups {
                let mean = grp.iter().map(|&i| diag[i]).sum::<f64>() / grp.len() as f64;
                for &i in grp {
                    diag[i] -= mean;
                }
            }
        }
    }
}

/// `tr(A M⁻¹ Aᵀ)` and its gradient on the free entries; `+∞` off the PD cone.
fn objective(layout: &Layout, at: &DMatrix<f64>, x: &[f64], g: &mut [f64]) -> f64 {
    let Some(chol) = layout.gram(x).cholesky() else {
        return f64::INFINITY;
    };
    let xm = chol.solve(at);
    let f = at.component_mul(&xm).sum();
    let gm = &xm * xm.transpose();
    for (gi, &(i, j)) in g.iter_mut().zip(&layout.off) {
        *gi = -2.0 * gm[(i, j)];
    }
    if layout.diag_groups.is_some() {
        for (i, gi) in g[layout.off.len()..].iter_mut().enumerate() {
            *gi = -gm[(i, i)];
        }
    }
    f
}

/// Lower-triangular `C` with `CᵀC = M`: `C = J Lᵀ J` where `J M J = L Lᵀ`.
fn factor_gram(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let jmj = DMatrix::from_fn(n, n, |i, j| m[(n - 1 - i, n - 1 - j)]);
    let l = jmj
        .cholesky()
        .ok_or_else(|| Error::Indefinite("optimized Gram matrix is not positive definite".into()))?
        .unpack();
    Ok(DMatrix::from_fn(n, n, |i, j| if i >= j { l[(n - 1 - j, n - 1 - i)] } else { 0.0 }))
}

fn solve(workload: &WorkloadSpec, layout: Layout, config: &OptimizerConfig) -> Result<OptimizationResult> {
    let n = layout.n;
    let at = workload.materialize()?.transpose();
    let scale = |f: f64| (layout.sens_sq * f / n as f64).sqrt();
    let x0 = layout.x0();
    let initial = objective(&layout, &at, &x0, &mut vec![0.0; layout.dim()]);
    let f = |x: &[f64], g: &mut [f64]| objective(&layout, &at, x, g);
    let project = |g: &mut [f64]| layout.project(g);
    let out = minimize_smooth(f, x0, config, Some(&project))?;
    let c = factor_gram(&layout.gram(&out.x))?;
    Ok(OptimizationResult {
        strategy: Strategy::dense(c)?,
        objective: scale(out.value),
        initial_objective: scale(initial),
        iterations: out.iterations,
        converged: out.converged,
        certificate: Some(out.gradient_norm),
    })
}

/// RMS-optimal dense strategy for single participation: `diag(M) = 1`, off-diagonals free.
pub fn optimize_dense_streaming(workload: &WorkloadSpec, config: &OptimizerConfig) -> Result<OptimizationResult> {
    optimize_dense_multi(workload, ParticipationSchema::Single, config)
}

/// RMS-optimal dense strategy under multi-participation.
///
/// Cyclic: entries shared by a pattern are pinned to zero off the diagonal and each
/// pattern's diagonal sum is held at 1. Min-Sep: `diag(M) = 1` and `M` is banded
/// below the separation. Full: only the diagonal `M = I` is admissible.
pub fn optimize_dense_multi(
    workload: &WorkloadSpec,
    schema: ParticipationSchema,
    config: &OptimizerConfig,
) -> Result<OptimizationResult> {
    config.validate()?;
    workload.validate()?;
    let n = workload.n;
    check_materialize(n)?;
    schema.validate(n)?;
    let all_lower = |keep: &dyn Fn(usize, usize) -> bool| -> Vec<(usize, usize)> {
        (0..n).flat_map(|i| (0..i).map(move |j| (i, j))).filter(|&(i, j)| keep(i, j)).collect()
    };
    let layout = match schema {
        ParticipationSchema::Single => {
            Layout { n, off: all_lower(&|_, _| true), diag_groups: None, diag0: vec![1.0; n], sens_sq: 1.0 }
        }
        ParticipationSchema::Cyclic { b, k } => Layout {
            n,
            off: all_lower(&|i, j| i % b != j % b),
            diag_groups: (k > 1).then(|| (0..b).map(|r| (r..n).step_by(b).collect()).collect()),
            diag0: vec![1.0 / k as f64; n],
            sens_sq: 1.0,
        },
        ParticipationSchema::MinSep { b, k } => Layout {
            n,
            off: all_lower(&|i, j| i - j < b),
            diag_groups: None,
            diag0: vec![1.0; n],
            sens_sq: k.min(n.div_ceil(b)) as f64,
        },
        ParticipationSchema::Full => {
            Layout { n, off: Vec::new(), diag_groups: None, diag0: vec![1.0; n], sens_sq: n as f64 }
        }
    };
    solve(workload, layout, config)
}
