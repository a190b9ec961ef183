//! Forward bridge simulation from a score and the closed-form oracles used
//! to validate learned scores.
//!
//! The bridge SDE is `dX = (f + Σ·s) dt + σ dW`. Scores of fixed-endpoint
//! bridges diverge like `1/(T − t)`, so the score is only evaluated at
//! `t_0 … t_{L−1}`.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{EulerMaruyama, TimeGrid, TrajectoryBatch};
use crate::models::{ModelSpec, SdeModel};
use crate::scorenet::ScoreNetwork;

/// `∇_x log p(t, x; T, y)` for OU with rate `θ` and scale `σ`:
/// `e^{−θτ}/v(τ) · (y − x e^{−θτ})` with `τ = T − t`, `v(τ) = σ²(1 − e^{−2θτ})/(2θ)`.
pub fn ou_exact_score(theta: f64, sigma: f64, t: f64, x: &[f64], horizon: f64, y: &[f64]) -> Result<Vec<f64>> {
    if !(t < horizon) {
        return Err(Error::AtHorizon { t, horizon });
    }
    let tau = horizon - t;
    let decay = (-theta * tau).exp();
    let var = sigma * sigma * (-(-2.0 * theta * tau).exp_m1()) / (2.0 * theta);
    Ok(x.iter()
        .zip(y)
        .map(|(xi, yi)| decay / var * (yi - xi * decay))
        .collect())
}

/// `(y − x)/(σ²(T − t))`.
pub fn brownian_exact_score(sigma: f64, t: f64, x: &[f64], horizon: f64, y: &[f64]) -> Result<Vec<f64>> {
    if !(t < horizon) {
        return Err(Error::AtHorizon { t, horizon });
    }
    let scale = 1.0 / (sigma * sigma * (horizon - t));
    Ok(x.iter().zip(y).map(|(xi, yi)| (yi - xi) * scale).collect())
}

/// A score `s(t, x)` usable as a bridge drift correction.
#[derive(Debug, Clone)]
pub enum ScoreFunction {
    /// Learned score. `endpoint` is fed to conditioned networks and is the
    /// pin target when known.
    Network {
        net: Arc<ScoreNetwork>,
        endpoint: Option<Vec<f64>>,
    },
    ExactOu {
        theta: f64,
        sigma: f64,
        horizon: f64,
        y: Vec<f64>,
    },
    ExactBrownian {
        sigma: f64,
        horizon: f64,
        y: Vec<f64>,
    },
}

impl ScoreFunction {
    pub fn network(net: ScoreNetwork, endpoint: Option<Vec<f64>>) -> Result<Self> {
        if net.is_conditioned() && endpoint.is_none() {
            return Err(Error::invalid("endpoint", "conditioned network needs an endpoint"));
        }
        if let Some(y) = &endpoint {
            if y.len() != net.state_dim() {
                return Err(Error::DimensionMismatch {
                    context: "network endpoint",
                    expected: net.state_dim(),
                    actual: y.len(),
                });
            }
        }
        Ok(ScoreFunction::Network {
            net: Arc::new(net),
            endpoint,
        })
    }

    /// Closed-form score of `spec` conditioned on `y` at `horizon`.
    pub fn exact(spec: &ModelSpec, horizon: f64, y: Vec<f64>) -> Result<Self> {
        if y.len() != spec.dim() {
            return Err(Error::DimensionMismatch {
                context: "exact score endpoint",
                expected: spec.dim(),
                actual: y.len(),
            });
        }
        match *spec {
            ModelSpec::Ou { theta, sigma, .. } => Ok(ScoreFunction::ExactOu {
                theta,
                sigma,
                horizon,
                y,
            }),
            ModelSpec::Brownian { sigma, .. } => Ok(ScoreFunction::ExactBrownian { sigma, horizon, y }),
            ModelSpec::Cell { .. } => Err(Error::Unsupported(
                "no exact score is available for the cell model".into(),
            )),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ScoreFunction::Network { net, .. } => net.state_dim(),
            ScoreFunction::ExactOu { y, .. } | ScoreFunction::ExactBrownian { y, .. } => y.len(),
        }
    }

    /// Endpoint the bridge is conditioned on, if a single one is known.
    pub fn endpoint(&self) -> Option<&[f64]> {
        match self {
            ScoreFunction::Network { endpoint, .. } => endpoint.as_deref(),
            ScoreFunction::ExactOu { y, .. } | ScoreFunction::ExactBrownian { y, .. } => Some(y),
        }
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            ScoreFunction::Network { net, endpoint } => {
                let y = if net.is_conditioned() {
                    endpoint.as_deref()
                } else {
                    None
                };
                net.forward(t, x, y)
            }
            ScoreFunction::ExactOu {
                theta,
                sigma,
                horizon,
                y,
            } => ou_exact_score(*theta, *sigma, t, x, *horizon, y),
            ScoreFunction::ExactBrownian { sigma, horizon, y } => brownian_exact_score(*sigma, t, x, *horizon, y),
        }
    }

    /// Evaluates the score at `(times[r], states[r])` for every row `r`,
    /// batching network evaluations.
    pub fn eval_rows(&self, times: &[f64], states: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        match self {
            ScoreFunction::Network { net, endpoint } => {
                let width = net.config().input_dim();
                let y = if net.is_conditioned() {
                    endpoint.as_deref()
                } else {
                    None
                };
                let mut features = vec![0.0; times.len() * width];
                for (r, &t) in times.iter().enumerate() {
                    net.write_features(
                        t,
                        &states[r * d..(r + 1) * d],
                        y,
                        &mut features[r * width..(r + 1) * width],
                    );
                }
                Ok(net.forward_batch(&features, times.len())?.output().to_vec())
            }
            _ => {
                let mut out = Vec::with_capacity(states.len());
                for (r, &t) in times.iter().enumerate() {
                    out.extend(self.eval(t, &states[r * d..(r + 1) * d])?);
                }
                Ok(out)
            }
        }
    }
}

/// Treatment of the final step `t_{L−1} → T`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointHandling {
    /// Ordinary Euler step with the score taken at `t_{L−1}`.
    #[default]
    Free,
    /// Overwrite `X(T)` with the known endpoint.
    Pin,
}

#[allow(clippy::too_many_arguments)]
pub fn sample_bridge(
    model: &dyn SdeModel,
    score: &ScoreFunction,
    x0: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    handling: EndpointHandling,
) -> Result<TrajectoryBatch> {
    sample_bridge_with(
        &EulerMaruyama::default(),
        model,
        score,
        x0,
        grid,
        n_paths,
        seed,
        handling,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn sample_bridge_with(
    em: &EulerMaruyama,
    model: &dyn SdeModel,
    score: &ScoreFunction,
    x0: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    handling: EndpointHandling,
) -> Result<TrajectoryBatch> {
    if score.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "bridge score",
            expected: model.dim(),
            actual: score.dim(),
        });
    }
    let pin = match handling {
        EndpointHandling::Free => None,
        EndpointHandling::Pin => Some(
            score
                .endpoint()
                .ok_or_else(|| Error::Unsupported("pinning needs a fixed endpoint".into()))?
                .to_vec(),
        ),
    };
    let eval = |t: f64, x: &[f64]| score.eval(t, x);
    let mut batch = em.simulate_with_fallible_offset(model, &eval, x0, grid, n_paths, seed)?;
    if let Some(y) = pin {
        let last = grid.steps();
        for n in 0..n_paths {
            batch.state_mut(n, last).copy_from_slice(&y);
        }
    }
    Ok(batch)
}

/// Squared score error per grid time and its average over `t ≤ t_cutoff`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreErrorReport {
    pub times: Vec<f64>,
    pub mse: Vec<f64>,
    pub time_averaged_mse: f64,
    pub n_paths: usize,
    pub t_cutoff: f64,
}

#[derive(Serialize)]
struct ReportSummary {
    time_averaged_mse: f64,
    n_paths: usize,
    t_cutoff: f64,
}

impl ScoreErrorReport {
    /// `t,mse` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,mse")?;
        for (t, m) in self.times.iter().zip(&self.mse) {
            writeln!(out, "{t},{m}")?;
        }
        Ok(())
    }

    /// `{time_averaged_mse, n_paths, t_cutoff}`.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::to_value(ReportSummary {
            time_averaged_mse: self.time_averaged_mse,
            n_paths: self.n_paths,
            t_cutoff: self.t_cutoff,
        })
        .expect("summary serializes")
    }
}

/// Compares two scores on the states of `eval_states` at every grid time
/// `t_ℓ ≤ t_cutoff` (which must lie before the horizon).
pub fn score_error_report(
    candidate: &ScoreFunction,
    reference: &ScoreFunction,
    eval_states: &TrajectoryBatch,
    t_cutoff: f64,
) -> Result<ScoreErrorReport> {
    if eval_states.is_empty() {
        return Err(Error::invalid("eval_states", "no states to evaluate on"));
    }
    let grid = eval_states.grid();
    if !(t_cutoff < grid.horizon()) {
        return Err(Error::invalid("t_cutoff", "must lie before the horizon"));
    }
    let d = eval_states.dim();
    if candidate.dim() != d || reference.dim() != d {
        return Err(Error::DimensionMismatch {
            context: "score error report",
            expected: d,
            actual: candidate.dim(),
        });
    }
    let n = eval_states.n_paths();
    let steps: Vec<usize> = (0..grid.steps()).filter(|&l| grid.node(l) <= t_cutoff).collect();
    let mut times = Vec::with_capacity(steps.len() * n);
    let mut states = Vec::with_capacity(steps.len() * n * d);
    for &l in &steps {
        for p in 0..n {
            times.push(grid.node(l));
            states.extend_from_slice(eval_states.state(p, l));
        }
    }
    let a = candidate.eval_rows(&times, &states)?;
    let b = reference.eval_rows(&times, &states)?;
    let mse: Vec<f64> = steps
        .iter()
        .enumerate()
        .map(|(k, _)| {
            let block = k * n * d..(k + 1) * n * d;
            a[block.clone()]
                .iter()
                .zip(&b[block])
                .map(|(u, v)| (u - v).powi(2))
                .sum::<f64>()
                / n as f64
        })
        .collect();
    if mse.is_empty() {
        return Err(Error::invalid("t_cutoff", "no grid time lies at or before the cutoff"));
    }
    let time_averaged_mse = mse.iter().sum::<f64>() / mse.len() as f64;
    Ok(ScoreErrorReport {
        times: steps.iter().map(|&l| grid.node(l)).collect(),
        mse,
        time_averaged_mse,
        n_paths: n,
        t_cutoff,
    })
}

/// Summary statistics of bridge endpoints at a given grid step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EndpointStats {
    pub step: usize,
    /// Mean Euclidean distance to the target point.
    pub mean_distance: f64,
    /// Fraction of paths within `hit_radius` of the target point.
    pub hit_fraction: f64,
    pub hit_radius: f64,
}

pub fn endpoint_stats(batch: &TrajectoryBatch, step: usize, target: &[f64], hit_radius: f64) -> EndpointStats {
    let n = batch.n_paths();
    let dists: Vec<f64> = (0..n)
        .map(|p| {
            batch
                .state(p, step)
                .iter()
                .zip(target)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    EndpointStats {
        step,
        mean_distance: dists.iter().sum::<f64>() / n as f64,
        hit_fraction: dists.iter().filter(|&&r| r <= hit_radius).count() as f64 / n as f64,
        hit_radius,
    }
}

/// Mean `| ‖X(t_step)‖ − radius |` over paths.
pub fn mean_radius_residual(batch: &TrajectoryBatch, step: usize, radius: f64) -> f64 {
    let n = batch.n_paths();
    (0..n)
        .map(|p| {
            let norm = batch.state(p, step).iter().map(|v| v * v).sum::<f64>().sqrt();
            (norm - radius).abs()
        })
        .sum::<f64>()
        / n as f64
}
