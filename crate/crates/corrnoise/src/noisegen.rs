//! Streaming generation of correlated noise rows `z̃_t = (C⁻¹ Z)[t, :]`.
//!
//! Seed noise comes from [`regenerate_row`]: row `key` of `Z` is a pure function of
//! `(base_seed, key)`. The key is the step index, or the post-order node index for
//! trees. Not suitable where cryptographically secure noise is required.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::strategies::{dyadic_partition, tree_factorization, Strategy, StrategyKind, TreeVariant};
use crate::{Error, Result};

/// Domain-separation tag occupying the last 16 key bytes.
const KEY_TAG: &[u8; 16] = b"corrnoise-row-v1";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSource {
    pub base_seed: u64,
    /// Per-coordinate standard deviation.
    pub nu: f64,
    /// Row dimension.
    pub m: usize,
}

impl NoiseSource {
    pub fn new(base_seed: u64, nu: f64, m: usize) -> Self {
        Self { base_seed, nu, m }
    }
}

/// Row `key` of the seed noise: `m` independent `N(0, ν²)` values.
///
/// The ChaCha8 key is `base_seed` (little endian) ‖ `key` (little endian) ‖ a fixed
/// 16-byte tag. Each pair of 64-bit outputs becomes two normals by Box–Muller on
/// 53-bit uniforms, `u1 ∈ (0, 1]`, `u2 ∈ [0, 1)`; an odd `m` drops the last sine
/// value. Outputs are identical on every platform with IEEE `f64` and a correctly
/// rounded `ln`/`sin`/`cos` to the same degree as the Rust standard library.
pub fn regenerate_row(source: &NoiseSource, key: u64) -> Vec<f64> {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&source.base_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&key.to_le_bytes());
    seed[16..].copy_from_slice(KEY_TAG);
    let mut rng = ChaCha8Rng::from_seed(seed);
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    let mut out = Vec::with_capacity(source.m + 1);
    while out.len() < source.m {
        let u1 = ((rng.next_u64() >> 11) + 1) as f64 * SCALE;
        let u2 = (rng.next_u64() >> 11) as f64 * SCALE;
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        out.push(source.nu * r * theta.cos());
        out.push(source.nu * r * theta.sin());
    }
    out.truncate(source.m);
    out
}

/// `(B_tree Z)[len-1, :]`: sum of node noises over the dyadic partition of `[0, len)`.
fn tree_prefix_noise(source: &NoiseSource, len: usize) -> Vec<f64> {
    let mut acc = vec![0.0; source.m];
    for node in dyadic_partition(len) {
        for (a, z) in acc.iter_mut().zip(regenerate_row(source, node.post_order_index())) {
            *a += z;
        }
    }
    acc
}

/// Basic-tree noise for step `t`: `(B Z)[t, :] - (B Z)[t-1, :]`.
pub fn tree_noise_row(source: &NoiseSource, t: usize) -> Vec<f64> {
    let cur = tree_prefix_noise(source, t + 1);
    if t == 0 {
        return cur;
    }
    let prev = tree_prefix_noise(source, t);
    cur.iter().zip(prev).map(|(a, b)| a - b).collect()
}

#[derive(Clone, Debug)]
enum GeneratorState {
    /// Toeplitz with `coeffs.len()` bands; `history` holds the last `bands - 1` outputs,
    /// newest first.
    Banded {
        coeffs: Vec<f64>,
        history: VecDeque<Vec<f64>>,
    },
    /// `buffer[i] = Σ_{τ=1..t} λ_i^{τ-1} z̃_{t-τ}`.
    Blt {
        alpha: Vec<f64>,
        lambda: Vec<f64>,
        buffer: Vec<Vec<f64>>,
    },
    /// Regenerates rows `0..=t` of `Z` each step.
    Dense {
        cinv: DMatrix<f64>,
    },
    Tree,
}

/// Advance-only producer of `z̃_0, z̃_1, …, z̃_{n-1}`.
#[derive(Clone, Debug)]
pub struct NoiseGenerator {
    n: usize,
    step: usize,
    source: NoiseSource,
    state: GeneratorState,
}

impl NoiseGenerator {
    pub fn new(strategy: &Strategy, source: NoiseSource) -> Result<Self> {
        strategy.validate()?;
        let state = match &strategy.kind {
            StrategyKind::Toeplitz(c) | StrategyKind::BandedToeplitz(c) => {
                GeneratorState::Banded { coeffs: c.clone(), history: VecDeque::with_capacity(c.len()) }
            }
            StrategyKind::Blt { alpha, lambda } => GeneratorState::Blt {
                alpha: alpha.clone(),
                lambda: lambda.clone(),
                buffer: vec![vec![0.0; source.m]; alpha.len()],
            },
            StrategyKind::Dense(_) => GeneratorState::Dense { cinv: strategy.materialize_inverse()? },
            StrategyKind::Tree(TreeVariant::Basic) => GeneratorState::Tree,
            StrategyKind::Tree(TreeVariant::FullPseudoinverse) => {
                return Err(Error::Unsupported(
                    "streaming the pseudoinverse tree needs O(n·m) memory; use materialized noise".into(),
                ))
            }
        };
        Ok(Self { n: strategy.n, step: 0, source, state })
    }

    /// Generator for `BLT(α, λ)⁻¹ Z` with arbitrary real parameters, e.g. the signed
    /// inverse parameters returned by `blt_invert` (then it produces `BLT(α, λ) Z`).
    pub fn blt_raw(n: usize, alpha: Vec<f64>, lambda: Vec<f64>, source: NoiseSource) -> Result<Self> {
        if alpha.len() != lambda.len() {
            return Err(Error::Shape { expected: alpha.len(), got: lambda.len() });
        }
        let buffer = vec![vec![0.0; source.m]; alpha.len()];
        Ok(Self { n, step: 0, source, state: GeneratorState::Blt { alpha, lambda, buffer } })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// BLT buffers (`d` rows of length `m`), if this is a BLT generator.
    pub fn blt_buffer(&self) -> Option<&[Vec<f64>]> {
        match &self.state {
            GeneratorState::Blt { buffer, .. } => Some(buffer),
            _ => None,
        }
    }

    pub fn next_noise(&mut self) -> Result<Vec<f64>> {
        let t = self.step;
        if t >= self.n {
            return Err(Error::Exhausted(self.n));
        }
        let src = self.source;
        let out = match &mut self.state {
            GeneratorState::Banded { coeffs, history } => {
                let mut z = regenerate_row(&src, t as u64);
                for (s, prev) in history.iter().enumerate() {
                    let c = coeffs[s + 1];
                    for (zi, pi) in z.iter_mut().zip(prev) {
                        *zi -= c * pi;
                    }
                }
                let inv_c0 = 1.0 / coeffs[0];
                z.iter_mut().for_each(|v| *v *= inv_c0);
                if coeffs.len() > 1 {
                    if history.len() == coeffs.len() - 1 {
                        history.pop_back();
                    }
                    history.push_front(z.clone());
                }
                z
            }
            GeneratorState::Blt { alpha, lambda, buffer } => {
                let mut z = regenerate_row(&src, t as u64);
                for (a, buf) in alpha.iter().zip(buffer.iter()) {
                    for (zi, bi) in z.iter_mut().zip(buf) {
                        *zi -= a * bi;
                    }
                }
                for (l, buf) in lambda.iter().zip(buffer.iter_mut()) {
                    for (bi, zi) in buf.iter_mut().zip(&z) {
                        *bi = *bi * l + zi;
                    }
                }
                z
            }
            GeneratorState::Dense { cinv } => {
                let mut acc = vec![0.0; src.m];
                for tau in 0..=t {
                    let w = cinv[(t, tau)];
                    if w != 0.0 {
                        for (a, z) in acc.iter_mut().zip(regenerate_row(&src, tau as u64)) {
                            *a += w * z;
                        }
                    }
                }
                acc
            }
            GeneratorState::Tree => tree_noise_row(&src, t),
        };
        self.step += 1;
        Ok(out)
    }

    /// Remaining rows collected into a `rows × m` matrix.
    pub fn take_rows(&mut self, rows: usize) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(rows, self.source.m);
        for r in 0..rows {
            let row = self.next_noise()?;
            for (j, v) in row.into_iter().enumerate() {
                out[(r, j)] = v;
            }
        }
        Ok(out)
    }
}

/// Seed noise rows `keys` stacked into a matrix.
pub fn seed_matrix(source: &NoiseSource, keys: impl IntoIterator<Item = u64>) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = keys.into_iter().map(|k| regenerate_row(source, k)).collect();
    DMatrix::from_fn(rows.len(), source.m, |i, j| rows[i][j])
}

/// The first `rows` noise rows computed from materialized matrices: `C⁻¹ Z` for square
/// strategies, consecutive differences of `B Z_nodes` for trees.
pub fn materialized_noise(strategy: &Strategy, source: &NoiseSource, rows: usize) -> Result<DMatrix<f64>> {
    if rows > strategy.n {
        return Err(Error::Exhausted(strategy.n));
    }
    let full = match &strategy.kind {
        StrategyKind::Tree(variant) => {
            let f = tree_factorization(strategy.n, *variant)?;
            let z = seed_matrix(source, f.nodes.iter().map(|node| node.post_order_index()));
            let bz = f.b * z;
            let mut out = bz.clone();
            for t in 1..strategy.n {
                let diff = bz.row(t) - bz.row(t - 1);
                out.set_row(t, &diff);
            }
            out
        }
        _ => {
            let z = seed_matrix(source, 0..strategy.n as u64);
            strategy.materialize_inverse()? * z
        }
    };
    Ok(full.rows(0, rows).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn src(m: usize) -> NoiseSource {
        NoiseSource::new(42, 1.0, m)
    }

    #[test]
    fn regeneration_is_deterministic() {
        let s = src(5);
        assert_eq!(regenerate_row(&s, 7), regenerate_row(&s, 7));
        assert_ne!(regenerate_row(&s, 7), regenerate_row(&s, 8));
        assert_eq!(regenerate_row(&NoiseSource::new(42, 0.0, 5), 3), vec![0.0; 5]);
        // A shorter row is a prefix of a longer one.
        assert_eq!(regenerate_row(&src(3), 9)[..], regenerate_row(&src(4), 9)[..3]);
    }

    #[test]
    fn identity_passes_seed_noise_through() {
        let s = src(3);
        let mut g = NoiseGenerator::new(&Strategy::identity(5), s).unwrap();
        for t in 0..5 {
            assert_eq!(g.next_noise().unwrap(), regenerate_row(&s, t));
        }
        assert!(matches!(g.next_noise(), Err(Error::Exhausted(5))));
    }

    #[test]
    fn blt_second_row() {
        let s = src(2);
        let mut g = NoiseGenerator::new(&Strategy::blt(3, vec![0.5], vec![0.5]).unwrap(), s).unwrap();
        g.next_noise().unwrap();
        let z1 = g.next_noise().unwrap();
        let (a, b) = (regenerate_row(&s, 0), regenerate_row(&s, 1));
        for j in 0..2 {
            assert!((z1[j] - (b[j] - 0.5 * a[j])).abs() < 1e-15);
        }
    }

    #[test]
    fn banded_third_row() {
        let s = src(2);
        let mut g = NoiseGenerator::new(&Strategy::banded(4, vec![1.0, 0.5]).unwrap(), s).unwrap();
        g.next_noise().unwrap();
        g.next_noise().unwrap();
        let z2 = g.next_noise().unwrap();
        let z: Vec<_> = (0..3).map(|t| regenerate_row(&s, t)).collect();
        for j in 0..2 {
            let want = z[2][j] - 0.5 * z[1][j] + 0.25 * z[0][j];
            assert!((z2[j] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn tree_rows() {
        let s = src(3);
        assert_eq!(tree_noise_row(&s, 0), regenerate_row(&s, 0));
        // Prefix [0, 3) = node [0, 2) (post-order 2) + leaf 2 (post-order 3).
        let bz2 = tree_prefix_noise(&s, 3);
        let (a, b) = (regenerate_row(&s, 2), regenerate_row(&s, 3));
        for j in 0..3 {
            assert!((bz2[j] - (a[j] + b[j])).abs() < 1e-15);
        }
    }

    #[test]
    fn pseudoinverse_tree_is_not_streamable() {
        let s = Strategy::tree(8, TreeVariant::FullPseudoinverse).unwrap();
        assert!(matches!(NoiseGenerator::new(&s, src(1)), Err(Error::Unsupported(_))));
        assert_eq!(materialized_noise(&s, &src(2), 8).unwrap().nrows(), 8);
    }
}
