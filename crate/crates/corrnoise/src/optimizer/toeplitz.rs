//! `sens² · err²` objectives for Toeplitz-family strategies, with analytic gradients.
//!
//! For Toeplitz `A` and `C` the decoder `B = A C⁻¹` is Toeplitz with first column
//! `b = a * c'`, where `c'` is the first column of `C⁻¹`. Sensitivity uses the
//! shifted-sum form `‖Σ_{j<k} shift(c, j·sep)‖²`, exact for the strategies these
//! objectives are applied to (nonnegative decaying BLTs, banded with bands ≤ sep).

use super::LossObjective;
use crate::sensitivity::shifted_sum;
use crate::strategies::{blt_coeffs, blt_inverse_column, toeplitz_inverse_column};

/// `E = Σ_t w_t b_t²` with `b = a * c'`.
pub(crate) struct ErrorTerm {
    /// `None` for the prefix workload (all ones), which admits `O(n)` evaluation.
    a: Option<Vec<f64>>,
    w: Vec<f64>,
}

impl ErrorTerm {
    pub(crate) fn new(workload_coeffs: Vec<f64>, prefix: bool, loss: LossObjective) -> Self {
        let n = workload_coeffs.len();
        let w = match loss {
            LossObjective::Max => vec![1.0; n],
            LossObjective::Rms => (0..n).map(|t| (n - t) as f64 / n as f64).collect(),
        };
        Self { a: if prefix { None } else { Some(workload_coeffs) }, w }
    }

    pub(crate) fn n(&self) -> usize {
        self.w.len()
    }

    /// `(E, ∂E/∂c')`.
    pub(crate) fn eval(&self, inv: &[f64]) -> (f64, Vec<f64>) {
        let n = self.n();
        let b: Vec<f64> = match &self.a {
            None => inv
                .iter()
                .scan(0.0, |acc, x| {
                    *acc += x;
                    Some(*acc)
                })
                .collect(),
            Some(a) => crate::workloads::toeplitz_lower_matvec(a, inv),
        };
        let e: f64 = b.iter().zip(&self.w).map(|(bt, wt)| wt * bt * bt).sum();
        let wb: Vec<f64> = b.iter().zip(&self.w).map(|(bt, wt)| 2.0 * wt * bt).collect();
        let mut gp = vec![0.0; n];
        match &self.a {
            None => {
                let mut acc = 0.0;
                for j in (0..n).rev() {
                    acc += wb[j];
                    gp[j] = acc;
                }
            }
            Some(a) => {
                for (j, g) in gp.iter_mut().enumerate() {
                    *g = (j..n).map(|t| wb[t] * a[t - j]).sum();
                }
            }
        }
        (e, gp)
    }
}

/// `S = ‖Σ_{j<k} shift(c, j·sep)‖²`.
pub(crate) struct SensTerm {
    pub sep: usize,
    pub k: usize,
}

impl SensTerm {
    /// `(S, ∂S/∂c)` for a full-length column `c`.
    pub(crate) fn eval(&self, c: &[f64]) -> (f64, Vec<f64>) {
        let n = c.len();
        let s = shifted_sum(c, self.sep, self.k);
        let value = s.iter().map(|x| x * x).sum();
        let grad = (0..n)
            .map(|m| (0..self.k).map(|j| m + j * self.sep).take_while(|&i| i < n).map(|i| 2.0 * s[i]).sum())
            .collect();
        (value, grad)
    }
}

/// Objective over the first `bands` coefficients of a banded Toeplitz `C`.
pub(crate) fn banded_objective(err: &ErrorTerm, sens: &SensTerm, c: &[f64], grad: &mut [f64]) -> f64 {
    let n = err.n();
    let bands = c.len();
    let Ok(inv) = toeplitz_inverse_column(c, n) else {
        return f64::INFINITY;
    };
    let (e, gp) = err.eval(&inv);
    // u = C⁻ᵀ gp by back substitution on the banded upper-triangular Cᵀ.
    let mut u = vec![0.0; n];
    for j in (0..n).rev() {
        let hi = (bands - 1).min(n - 1 - j);
        let acc: f64 = (1..=hi).map(|s| c[s] * u[j + s]).sum();
        u[j] = (gp[j] - acc) / c[0];
    }
    let mut full = c.to_vec();
    full.resize(n, 0.0);
    let (s, gs) = sens.eval(&full);
    for (k, g) in grad.iter_mut().enumerate() {
        let de: f64 = -(k..n).map(|j| u[j] * inv[j - k]).sum::<f64>();
        *g = e * gs[k] + s * de;
    }
    s * e
}

/// `BLT(α, λ)⁻¹ v` by the buffered recurrence.
fn blt_solve(alpha: &[f64], lambda: &[f64], v: &[f64]) -> Vec<f64> {
    let mut buf = vec![0.0; alpha.len()];
    v.iter()
        .map(|&z| {
            let zt = z - alpha.iter().zip(&buf).map(|(a, m)| a * m).sum::<f64>();
            for (m, l) in buf.iter_mut().zip(lambda) {
                *m = *m * l + zt;
            }
            zt
        })
        .collect()
}

/// Objective over BLT parameters; `grad` is laid out `[∂α…, ∂λ…]`. `O(n·(d + k))`.
pub(crate) fn blt_objective(err: &ErrorTerm, sens: &SensTerm, alpha: &[f64], lambda: &[f64], grad: &mut [f64]) -> f64 {
    let n = err.n();
    let d = alpha.len();
    let inv = blt_inverse_column(alpha, lambda, n);
    let (e, gp) = err.eval(&inv);
    // Cᵀ is C with time reversed, so C⁻ᵀ v = rev(C⁻¹ rev(v)).
    let rev: Vec<f64> = gp.iter().rev().copied().collect();
    let mut u = blt_solve(alpha, lambda, &rev);
    u.reverse();

    let c = blt_coeffs(alpha, lambda, n);
    let (s, gs) = sens.eval(&c);

    for i in 0..d {
        let (a, l) = (alpha[i], lambda[i]);
        // ∂E/∂c_k = -Σ_j u_j c'_{j-k}; contract with ∂c_k/∂α = λ^{k-1} and ∂c_k/∂λ = α(k-1)λ^{k-2}
        // through h(j) = Σ_{k=1..j} λ^{k-1} c'_{j-k} and its λ-derivative.
        let (mut h, mut dh) = (0.0, 0.0);
        let (mut de_da, mut de_dl) = (0.0, 0.0);
        // Sensitivity chain: Σ_k gs_k λ^{k-1} and Σ_k gs_k (k-1) λ^{k-2}.
        let (mut pow, mut dpow) = (1.0, 0.0);
        let (mut ds_da, mut ds_dl) = (0.0, 0.0);
        for j in 1..n {
            dh = h + l * dh;
            h = l * h + inv[j - 1];
            de_da -= u[j] * h;
            de_dl -= u[j] * dh;
            ds_da += gs[j] * pow;
            ds_dl += gs[j] * dpow;
            dpow = pow + l * dpow;
            pow *= l;
        }
        grad[i] = e * ds_da + s * de_da;
        grad[d + i] = a * (e * ds_dl + s * de_dl);
    }
    s * e
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_grad(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let h = 1e-6 * x[i].abs().max(1e-3);
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (f(&xp) - f(&xm)) / (2.0 * h)
            })
            .collect()
    }

    fn check(analytic: &[f64], numeric: &[f64]) {
        for (a, b) in analytic.iter().zip(numeric) {
            assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()), "{analytic:?} vs {numeric:?}");
        }
    }

    #[test]
    fn banded_gradient_matches_finite_differences() {
        let n = 12;
        for (loss, prefix) in [(LossObjective::Max, true), (LossObjective::Rms, true), (LossObjective::Rms, false)] {
            let a: Vec<f64> = if prefix { vec![1.0; n] } else { (0..n).map(|t| 1.0 + 0.3 * t as f64).collect() };
            let err = ErrorTerm::new(a, prefix, loss);
            for sens in [SensTerm { sep: n, k: 1 }, SensTerm { sep: 4, k: 3 }] {
                let c = [1.1, 0.4, 0.2, 0.1];
                let mut g = vec![0.0; 4];
                banded_objective(&err, &sens, &c, &mut g);
                let num = numeric_grad(&mut |x| banded_objective(&err, &sens, x, &mut [0.0; 4]), &c);
                check(&g, &num);
            }
        }
    }

    #[test]
    fn blt_gradient_matches_finite_differences() {
        let n = 30;
        let err = ErrorTerm::new(vec![1.0; n], true, LossObjective::Max);
        for sens in [SensTerm { sep: n, k: 1 }, SensTerm { sep: 7, k: 3 }] {
            let x = [0.2, 0.1, 0.05, 0.9, 0.5, 0.2];
            let mut g = vec![0.0; 6];
            blt_objective(&err, &sens, &x[..3], &x[3..], &mut g);
            let num = numeric_grad(&mut |p| blt_objective(&err, &sens, &p[..3], &p[3..], &mut [0.0; 6]), &x);
            check(&g, &num);
        }
    }

    #[test]
    fn blt_objective_agrees_with_banded_on_full_column() {
        let n = 20;
        let err = ErrorTerm::new(vec![1.0; n], true, LossObjective::Rms);
        let sens = SensTerm { sep: 5, k: 2 };
        let (alpha, lambda) = ([0.3, 0.1], [0.8, 0.3]);
        let c = blt_coeffs(&alpha, &lambda, n);
        let f1 = blt_objective(&err, &sens, &alpha, &lambda, &mut [0.0; 4]);
        let f2 = banded_objective(&err, &sens, &c, &mut vec![0.0; n]);
        assert!((f1 - f2).abs() < 1e-12 * f2);
    }
}
