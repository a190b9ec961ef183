//! Adjoint process `{Y, 𝒴}` with reversed dynamics.
//!
//! For a base SDE `dX = f dt + σ dW` on `[t0, T]` the adjoint runs forward in
//! its own time `s ∈ [t0, T]` from `Y(t0) = y` with
//!
//! ```text
//! dY     = α(s, Y) ds + σ̃(s, Y) dW̃
//! d log𝒴 = c(s, Y) ds
//! α^i(s, x) = Σ_j ∂_j Σ^{ij}(T+t0−s, x) − f^i(T+t0−s, x)
//! σ̃(s, x)   = σ(T+t0−s, x)
//! c(s, x)   = ½ Σ_{ij} ∂_i∂_j Σ^{ij}(T+t0−s, x) − Σ_i ∂_i f^i(T+t0−s, x)
//! ```
//!
//! and satisfies `E[g(Y(T)) 𝒴(T)] = ∫ g(x) p(t0, x; T, y) dx`.
//! The weight is integrated in log-space.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::{Dynamics, EulerMaruyama, Initial, StepCoefficients, TimeGrid, TrajectoryBatch};
use crate::models::{ModelSpec, SharedModel};

#[derive(Debug, Clone)]
pub struct AdjointSystem {
    base: SharedModel,
    t0: f64,
    horizon: f64,
}

pub fn build_adjoint(model: SharedModel, t0: f64, horizon: f64) -> Result<AdjointSystem> {
    AdjointSystem::new(model, t0, horizon)
}

impl AdjointSystem {
    pub fn new(base: SharedModel, t0: f64, horizon: f64) -> Result<Self> {
        if !(t0.is_finite() && horizon.is_finite()) || horizon <= t0 {
            return Err(Error::invalid(
                "horizon",
                format!("need t0 < T, got t0 = {t0}, T = {horizon}"),
            ));
        }
        Ok(Self { base, t0, horizon })
    }

    pub fn base(&self) -> &SharedModel {
        &self.base
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    fn reflect(&self, s: f64) -> f64 {
        if self.base.time_homogeneous() {
            // keep coefficients independent of s bit-for-bit
            self.t0
        } else {
            self.horizon + self.t0 - s
        }
    }

    pub fn alpha(&self, s: f64, x: &[f64]) -> Vec<f64> {
        let r = self.reflect(s);
        let mut a = self.base.sigma_sq_div(r, x);
        for (ai, fi) in a.iter_mut().zip(self.base.drift(r, x)) {
            *ai -= fi;
        }
        a
    }

    pub fn sigma_tilde(&self, s: f64, x: &[f64]) -> DMatrix<f64> {
        self.base.diffusion(self.reflect(s), x)
    }

    pub fn c(&self, s: f64, x: &[f64]) -> f64 {
        let r = self.reflect(s);
        0.5 * self.base.sigma_sq_hess_trace(r, x) - self.base.drift_div(r, x)
    }

    fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        let tol = 1e-12 * (1.0 + self.horizon.abs());
        if (grid.t0() - self.t0).abs() > tol || (grid.horizon() - self.horizon).abs() > tol {
            return Err(Error::invalid(
                "grid",
                format!(
                    "adjoint grid must span [{}, {}], got [{}, {}]",
                    self.t0,
                    self.horizon,
                    grid.t0(),
                    grid.horizon()
                ),
            ));
        }
        Ok(())
    }

    /// Simulates `n_paths` adjoint trajectories from `Y(t0) = y`.
    pub fn simulate(
        &self,
        em: &EulerMaruyama,
        y: &[f64],
        grid: &TimeGrid,
        n_paths: usize,
        seed: u64,
    ) -> Result<TrajectoryBatch> {
        self.check_grid(grid)?;
        em.run(self, Initial::Shared(y), grid, n_paths, seed)
    }

    /// Simulates one adjoint trajectory per starting point; `starts` holds
    /// `n_paths × d` values.
    pub fn simulate_from(
        &self,
        em: &EulerMaruyama,
        starts: &[f64],
        grid: &TimeGrid,
        seed: u64,
    ) -> Result<TrajectoryBatch> {
        self.check_grid(grid)?;
        let d = self.dim();
        if starts.is_empty() || starts.len() % d != 0 {
            return Err(Error::DimensionMismatch {
                context: "adjoint starting points",
                expected: d,
                actual: starts.len(),
            });
        }
        em.run(self, Initial::PerPath(starts), grid, starts.len() / d, seed)
    }
}

impl Dynamics for AdjointSystem {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn noise_dim(&self) -> usize {
        self.base.noise_dim()
    }
    fn coefficients(&self, _path: usize, _step: usize, s: f64, x: &[f64]) -> Result<StepCoefficients> {
        Ok(StepCoefficients {
            drift: self.alpha(s, x),
            diffusion: self.sigma_tilde(s, x),
            log_rate: self.c(s, x),
        })
    }
}

pub fn simulate_adjoint(
    adj: &AdjointSystem,
    y: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    adj.simulate(&EulerMaruyama::default(), y, grid, n_paths, seed)
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub estimate: f64,
    pub std_error: f64,
}

impl Estimate {
    /// Sample mean and standard error. Moments are taken about the first
    /// sample, so identical samples give a standard error of exactly zero.
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let shift = values.first().copied().unwrap_or(0.0);
        let (sum, sum_sq) = values
            .iter()
            .fold((0.0, 0.0), |(s, q), v| (s + (v - shift), q + (v - shift).powi(2)));
        let var = if values.len() > 1 {
            ((sum_sq - sum * sum / n) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        Self {
            estimate: shift + sum / n,
            std_error: (var / n).sqrt(),
        }
    }
}

/// `(1/N) Σ g(Y_n(T)) 𝒴_n(T)`, an unbiased estimate of `∫ g(x) p(t0, x; T, y) dx`.
pub fn adjoint_expectation<G>(
    adj: &AdjointSystem,
    y: &[f64],
    grid: &TimeGrid,
    g: G,
    n_paths: usize,
    seed: u64,
) -> Result<Estimate>
where
    G: Fn(&[f64]) -> f64,
{
    let batch = simulate_adjoint(adj, y, grid, n_paths, seed)?;
    Ok(weighted_terminal_mean(&batch, g))
}

pub fn weighted_terminal_mean<G>(batch: &TrajectoryBatch, g: G) -> Estimate
where
    G: Fn(&[f64]) -> f64,
{
    let values: Vec<f64> = (0..batch.n_paths())
        .map(|n| g(batch.final_state(n)) * batch.log_weights()[n].exp())
        .collect();
    Estimate::from_samples(&values)
}

/// Test functionals with closed-form adjoint expectations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Functional {
    /// `g ≡ 1`
    One,
    /// `g(x) = x_0`
    FirstCoordinate,
    /// `g(x) = x_0²`
    FirstCoordinateSquared,
}

impl Functional {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Functional::One => 1.0,
            Functional::FirstCoordinate => x[0],
            Functional::FirstCoordinateSquared => x[0] * x[0],
        }
    }

    pub fn all() -> [Functional; 3] {
        [
            Functional::One,
            Functional::FirstCoordinate,
            Functional::FirstCoordinateSquared,
        ]
    }
}

/// Closed form of `∫ g(x) p(t0, x; T, y) dx` for the models that have one.
///
/// For OU, `p(t0, x; T, y) = Π_i N(y_i; a x_i, v)` with `a = e^{−θτ}`,
/// `v = σ²(1 − e^{−2θτ})/(2θ)` and `τ = T − t0`; substituting `u = a x_i`
/// gives `∫ 1 = a^{−d}`, `∫ x_0 = y_0 a^{−d−1}` and `∫ x_0² = (y_0² + v) a^{−d−2}`.
pub fn closed_form_expectation(spec: &ModelSpec, functional: Functional, y: &[f64], tau: f64) -> Result<f64> {
    match *spec {
        ModelSpec::Ou { theta, sigma, dim } => {
            let a = (-theta * tau).exp();
            let v = sigma * sigma * (1.0 - (-2.0 * theta * tau).exp()) / (2.0 * theta);
            let base = a.powi(-(dim as i32));
            Ok(match functional {
                Functional::One => base,
                Functional::FirstCoordinate => y[0] * base / a,
                Functional::FirstCoordinateSquared => (y[0] * y[0] + v) * base / (a * a),
            })
        }
        ModelSpec::Brownian { sigma, .. } => Ok(match functional {
            Functional::One => 1.0,
            Functional::FirstCoordinate => y[0],
            Functional::FirstCoordinateSquared => y[0] * y[0] + sigma * sigma * tau,
        }),
        ModelSpec::Cell { .. } => Err(Error::Unsupported(
            "no closed-form adjoint expectation is registered for the cell model".into(),
        )),
    }
}
