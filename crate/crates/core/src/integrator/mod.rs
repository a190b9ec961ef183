//! Euler–Maruyama simulation on uniform grids.

mod batch;
mod grid;
pub mod noise;

use nalgebra::DMatrix;
use rayon::prelude::*;

pub use batch::TrajectoryBatch;
pub use grid::TimeGrid;
pub use noise::{NoiseMode, NoiseStream};

use crate::error::{Error, Result};
use crate::models::SdeModel;

/// Default bound on `|Σ·s|` before a drift-offset simulation is aborted.
pub const DEFAULT_EXPLOSION_BOUND: f64 = 1e6;

/// Coefficients of one Euler–Maruyama step.
pub(crate) struct StepCoefficients {
    pub drift: Vec<f64>,
    pub diffusion: DMatrix<f64>,
    /// Rate `c` of `d(log 𝒴) = c dt`.
    pub log_rate: f64,
}

/// Per-step coefficient provider used by the generic path loop.
pub(crate) trait Dynamics: Sync {
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn coefficients(&self, path: usize, step: usize, t: f64, x: &[f64]) -> Result<StepCoefficients>;
}

/// Initial values: one shared point or one point per path.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Initial<'a> {
    Shared(&'a [f64]),
    PerPath(&'a [f64]),
}

impl Initial<'_> {
    fn get(&self, n: usize, dim: usize) -> &[f64] {
        match *self {
            Initial::Shared(x) => x,
            Initial::PerPath(xs) => &xs[n * dim..(n + 1) * dim],
        }
    }

    fn check(&self, dim: usize, n_paths: usize) -> Result<()> {
        let (expected, actual) = match *self {
            Initial::Shared(x) => (dim, x.len()),
            Initial::PerPath(xs) => (dim * n_paths, xs.len()),
        };
        if expected != actual {
            return Err(Error::DimensionMismatch {
                context: "initial value",
                expected,
                actual,
            });
        }
        Ok(())
    }
}

/// Euler–Maruyama scheme with the options shared by every simulation entry
/// point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerMaruyama {
    pub noise: NoiseMode,
    pub explosion_bound: f64,
}

impl Default for EulerMaruyama {
    fn default() -> Self {
        Self {
            noise: NoiseMode::Gaussian,
            explosion_bound: DEFAULT_EXPLOSION_BOUND,
        }
    }
}

struct Plain<'a> {
    model: &'a dyn SdeModel,
}

impl Dynamics for Plain<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }
    fn noise_dim(&self) -> usize {
        self.model.noise_dim()
    }
    fn coefficients(&self, _path: usize, _step: usize, t: f64, x: &[f64]) -> Result<StepCoefficients> {
        Ok(StepCoefficients {
            drift: self.model.drift(t, x),
            diffusion: self.model.diffusion(t, x),
            log_rate: 0.0,
        })
    }
}

pub type FallibleScore<'a> = dyn Fn(f64, &[f64]) -> Result<Vec<f64>> + Sync + 'a;

struct Offset<'a> {
    model: &'a dyn SdeModel,
    score: &'a FallibleScore<'a>,
    bound: f64,
}

impl Dynamics for Offset<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }
    fn noise_dim(&self) -> usize {
        self.model.noise_dim()
    }
    fn coefficients(&self, path: usize, step: usize, t: f64, x: &[f64]) -> Result<StepCoefficients> {
        let mut drift = self.model.drift(t, x);
        let s = (self.score)(t, x)?;
        if s.len() != drift.len() {
            return Err(Error::DimensionMismatch {
                context: "score output",
                expected: drift.len(),
                actual: s.len(),
            });
        }
        let sigma_sq = self.model.sigma_sq(t, x);
        let offset = &sigma_sq * nalgebra::DVector::from_column_slice(&s);
        let magnitude = offset.norm();
        if !(magnitude <= self.bound) {
            return Err(Error::Explosion {
                path,
                step,
                magnitude,
                bound: self.bound,
            });
        }
        for (f, o) in drift.iter_mut().zip(offset.iter()) {
            *f += o;
        }
        Ok(StepCoefficients {
            drift,
            diffusion: self.model.diffusion(t, x),
            log_rate: 0.0,
        })
    }
}

impl EulerMaruyama {
    pub fn with_noise(mut self, noise: NoiseMode) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_explosion_bound(mut self, bound: f64) -> Self {
        self.explosion_bound = bound;
        self
    }

    /// Simulates `dX = f dt + σ dW` from `x0`.
    pub fn simulate(
        &self,
        model: &dyn SdeModel,
        x0: &[f64],
        grid: &TimeGrid,
        n_paths: usize,
        seed: u64,
    ) -> Result<TrajectoryBatch> {
        self.run(&Plain { model }, Initial::Shared(x0), grid, n_paths, seed)
    }

    /// Simulates `dX = (f + Σ·s) dt + σ dW` from `x0`.
    ///
    /// The score is evaluated at `t_0 … t_{L−1}` only, never at the horizon.
    pub fn simulate_with_drift_offset<S>(
        &self,
        model: &dyn SdeModel,
        score: &S,
        x0: &[f64],
        grid: &TimeGrid,
        n_paths: usize,
        seed: u64,
    ) -> Result<TrajectoryBatch>
    where
        S: Fn(f64, &[f64]) -> Vec<f64> + Sync,
    {
        let fallible = |t: f64, x: &[f64]| Ok(score(t, x));
        self.simulate_with_fallible_offset(model, &fallible, x0, grid, n_paths, seed)
    }

    /// As [`simulate_with_drift_offset`](Self::simulate_with_drift_offset)
    /// for scores that can fail; the first failure aborts the batch.
    pub fn simulate_with_fallible_offset(
        &self,
        model: &dyn SdeModel,
        score: &FallibleScore<'_>,
        x0: &[f64],
        grid: &TimeGrid,
        n_paths: usize,
        seed: u64,
    ) -> Result<TrajectoryBatch> {
        let dynamics = Offset {
            model,
            score,
            bound: self.explosion_bound,
        };
        self.run(&dynamics, Initial::Shared(x0), grid, n_paths, seed)
    }

    pub(crate) fn run<D: Dynamics>(
        &self,
        dynamics: &D,
        initial: Initial<'_>,
        grid: &TimeGrid,
        n_paths: usize,
        seed: u64,
    ) -> Result<TrajectoryBatch> {
        if n_paths == 0 {
            return Err(Error::invalid("n_paths", "need at least one path"));
        }
        let d = dynamics.dim();
        initial.check(d, n_paths)?;
        let steps = grid.steps();
        let stride = (steps + 1) * d;
        let mut states = vec![0.0; n_paths * stride];
        let mut log_weights = vec![0.0; n_paths];

        let results: Vec<Result<()>> = states
            .par_chunks_mut(stride)
            .zip(log_weights.par_iter_mut())
            .enumerate()
            .map(|(n, (path, lw))| self.run_path(dynamics, initial.get(n, d), grid, n, seed, path, lw))
            .collect();
        results.into_iter().collect::<Result<()>>()?;

        TrajectoryBatch::from_parts(*grid, d, states, log_weights, seed)
    }

    #[allow(clippy::too_many_arguments)]
    fn run_path<D: Dynamics>(
        &self,
        dynamics: &D,
        x0: &[f64],
        grid: &TimeGrid,
        n: usize,
        seed: u64,
        path: &mut [f64],
        log_weight: &mut f64,
    ) -> Result<()> {
        let d = dynamics.dim();
        let m = dynamics.noise_dim();
        let dt = grid.dt();
        let sqrt_dt = dt.sqrt();
        let mut noise = NoiseStream::new(seed, n, self.noise);
        let mut xi = vec![0.0; m];
        // Σ c_ℓ; the log-weight is (Σ c_ℓ)·span/L, which equals Σ c_ℓ·dt and
        // is exact whenever c is a constant integer.
        let mut rate_sum = 0.0;

        path[..d].copy_from_slice(x0);
        for step in 0..grid.steps() {
            let t = grid.node(step);
            let (done, rest) = path.split_at_mut((step + 1) * d);
            let x = &done[step * d..];
            let next = &mut rest[..d];
            let coeffs = dynamics.coefficients(n, step, t, x)?;
            noise.fill(&mut xi);
            for i in 0..d {
                let mut shock = 0.0;
                for (k, z) in xi.iter().enumerate() {
                    shock += coeffs.diffusion[(i, k)] * z;
                }
                next[i] = x[i] + coeffs.drift[i] * dt + shock * sqrt_dt;
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState {
                    path: n,
                    step: step + 1,
                });
            }
            rate_sum += coeffs.log_rate;
            if !rate_sum.is_finite() {
                return Err(Error::NonFiniteWeight {
                    path: n,
                    step: step + 1,
                });
            }
        }
        *log_weight = rate_sum * grid.span() / grid.steps() as f64;
        Ok(())
    }
}

pub fn simulate(
    model: &dyn SdeModel,
    x0: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    EulerMaruyama::default().simulate(model, x0, grid, n_paths, seed)
}

pub fn simulate_with_drift_offset<S>(
    model: &dyn SdeModel,
    score: &S,
    x0: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<TrajectoryBatch>
where
    S: Fn(f64, &[f64]) -> Vec<f64> + Sync,
{
    EulerMaruyama::default().simulate_with_drift_offset(model, score, x0, grid, n_paths, seed)
}
