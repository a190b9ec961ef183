//! Per-path Gaussian noise streams.
//!
//! Path `n` of a batch simulated with seed `s` draws from ChaCha8 stream `n`
//! of key `s`; step `ℓ` consumes draws `ℓ·m .. (ℓ+1)·m`. A draw is therefore
//! a pure function of `(seed, path, step)` and does not depend on which
//! worker simulates the path or in which order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Whether Brownian increments are sampled or forced to zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    #[default]
    Gaussian,
    /// Zero increments: the scheme degenerates to explicit Euler on the drift.
    Suppressed,
}

#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    mode: NoiseMode,
}

impl NoiseStream {
    pub fn new(seed: u64, path: usize, mode: NoiseMode) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path as u64);
        Self { rng, mode }
    }

    /// Fills `out` with independent standard normals.
    pub fn fill(&mut self, out: &mut [f64]) {
        match self.mode {
            NoiseMode::Gaussian => {
                for v in out.iter_mut() {
                    *v = StandardNormal.sample(&mut self.rng);
                }
            }
            NoiseMode::Suppressed => out.fill(0.0),
        }
    }
}

/// Stream index reserved for auxiliary draws (endpoint sampling, seed
/// derivation) so they never collide with path streams.
pub(crate) const AUX_STREAM: u64 = u64::MAX;

/// Deterministic generator for auxiliary randomness keyed by `seed`.
pub fn aux_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(AUX_STREAM);
    rng
}

/// Sequence of sub-seeds derived from a master seed.
#[derive(Debug, Clone)]
pub struct SeedSequence(ChaCha8Rng);

impl SeedSequence {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(AUX_STREAM - 1);
        Self(rng)
    }

    pub fn next_seed(&mut self) -> u64 {
        self.0.next_u64()
    }
}
