//! Limited-memory BFGS with Armijo backtracking.

use std::collections::VecDeque;

use super::OptimizerConfig;
use crate::{Error, Result};

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;
/// Steps that change the value by less than this (relative) count as roundoff-level.
const FLAT_TOL: f64 = 1e-13;

#[derive(Clone, Debug, PartialEq)]
pub struct MinimizeOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// ∞-norm of the (transformed) gradient at `x`.
    pub gradient_norm: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes `f`, which writes the gradient into its second argument and returns
/// the value (`+∞` marks an infeasible point; the line search backs off from it).
///
/// `transform` is applied to every gradient before use, e.g. a projection onto a
/// constraint subspace. Deterministic for fixed inputs.
pub fn minimize_smooth<F>(
    mut f: F,
    x0: Vec<f64>,
    config: &OptimizerConfig,
    transform: Option<&dyn Fn(&mut [f64])>,
) -> Result<MinimizeOutcome>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let dim = x0.len();
    let apply = |g: &mut [f64]| {
        if let Some(t) = transform {
            t(g)
        }
    };
    let mut x = x0;
    let mut g = vec![0.0; dim];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() {
        return Err(Error::Domain("objective is not finite at the initial point".into()));
    }
    apply(&mut g);
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.memory_pairs);
    let mut iterations = 0;
    let mut x_new = vec![0.0; dim];
    let mut g_new = vec![0.0; dim];

    while iterations < config.max_iterations {
        let gnorm = inf_norm(&g);
        if gnorm <= config.gradient_tolerance || dim == 0 {
            return Ok(MinimizeOutcome { x, value: fx, iterations, converged: true, gradient_norm: gnorm });
        }

        let mut accepted = false;
        for attempt in 0..2 {
            if attempt == 1 {
                if memory.is_empty() {
                    break;
                }
                memory.clear();
            }
            let mut d = two_loop(&g, &memory);
            apply(&mut d);
            let mut slope = dot(&g, &d);
            if !(slope < 0.0) {
                memory.clear();
                d = g.iter().map(|v| -v).collect();
                slope = -dot(&g, &g);
            }
            let mut step = if memory.is_empty() { (1.0 / dot(&d, &d).sqrt()).min(1.0) } else { 1.0 };
            for _ in 0..=MAX_BACKTRACKS {
                for i in 0..dim {
                    x_new[i] = x[i] + step * d[i];
                }
                let f_new = f(&x_new, &mut g_new);
                if f_new.is_finite() {
                    apply(&mut g_new);
                    let armijo = f_new <= fx + ARMIJO_C1 * step * slope;
                    let flat = f_new - fx <= FLAT_TOL * fx.abs() && inf_norm(&g_new) < gnorm;
                    if armijo || flat {
                        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                        let sy = dot(&s, &y);
                        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
                            if memory.len() == config.memory_pairs {
                                memory.pop_front();
                            }
                            memory.push_back((s, y, 1.0 / sy));
                        }
                        std::mem::swap(&mut x, &mut x_new);
                        std::mem::swap(&mut g, &mut g_new);
                        fx = f_new;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if accepted {
                break;
            }
        }
        iterations += 1;
        if !accepted {
            let gradient_norm = inf_norm(&g);
            return Ok(MinimizeOutcome {
                x,
                value: fx,
                iterations,
                converged: gradient_norm <= config.gradient_tolerance,
                gradient_norm,
            });
        }
    }
    let gradient_norm = inf_norm(&g);
    Ok(MinimizeOutcome {
        x,
        value: fx,
        iterations,
        converged: gradient_norm <= config.gradient_tolerance,
        gradient_norm,
    })
}

/// `-H g` from the stored curvature pairs.
fn two_loop(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
