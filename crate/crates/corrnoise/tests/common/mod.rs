#![allow(dead_code)]

use nalgebra::DMatrix;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small deterministic sampler for test fixtures.
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.0.next_u64() % (hi - lo + 1) as u64) as usize
    }
}

/// Random lower-triangular matrix with `bandwidth` nonzero diagonals and a positive diagonal.
pub fn random_lower(rng: &mut Rng, n: usize, bandwidth: usize, nonneg: bool) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i.saturating_sub(bandwidth - 1)..=i {
            c[(i, j)] = if i == j {
                rng.range(0.5, 1.5)
            } else if nonneg {
                rng.uniform()
            } else {
                rng.range(-1.0, 1.0)
            };
        }
    }
    c
}

/// `α ∈ (0.01, 1)`, decays in `(0.01, 0.99)` at least `0.02` apart, resampled until
/// the inverse decays are inside `(-1, 1)` so `C⁻¹` stays bounded in `n`.
pub fn random_blt_params(rng: &mut Rng, d: usize) -> (Vec<f64>, Vec<f64>) {
    loop {
        let alpha: Vec<f64> = (0..d).map(|_| rng.range(0.01, 1.0)).collect();
        let mut lambda: Vec<f64> = Vec::with_capacity(d);
        while lambda.len() < d {
            let l = rng.range(0.01, 0.99);
            if lambda.iter().all(|x| (x - l).abs() >= 0.02) {
                lambda.push(l);
            }
        }
        let stable = corrnoise::strategies::blt_invert(&alpha, &lambda)
            .map(|inv| inv.lambda_hat.iter().all(|l| l.abs() < 1.0))
            .unwrap_or(false);
        if stable {
            return (alpha, lambda);
        }
    }
}

/// `‖a - b‖_F / ‖b‖_F` (absolute when `b = 0`).
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let d = (a - b).norm();
    let s = b.norm();
    if s == 0.0 {
        d
    } else {
        d / s
    }
}
