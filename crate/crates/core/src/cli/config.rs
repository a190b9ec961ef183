use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adjoint::Functional;
use crate::bridge::EndpointHandling;
use crate::error::{Error, Result};
use crate::integrator::TimeGrid;
use crate::models::ModelSpec;
use crate::scorenet::AdamConfig;
use crate::training::{EndpointSpec, Metric, NetworkSettings, TrainConfig, WeightMode};

/// Top-level run configuration shared by all subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub grid: GridBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<EvaluationBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjoint_check: Option<AdjointCheckBlock>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub horizon: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingBlock {
    pub batch_size: usize,
    pub iterations: usize,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub network: NetworkSettings,
    pub endpoint: EndpointSpec,
    #[serde(default)]
    pub weight_mode: WeightMode,
    #[serde(default)]
    pub metric: Metric,
}

/// Where the bridge drift correction comes from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    /// A trained checkpoint.
    #[default]
    Network,
    /// The closed-form score (OU and Brownian only).
    Exact,
}

/// Start points evenly spaced on a circle in the first two coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ring {
    pub radius: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingBlock {
    #[serde(default)]
    pub x0: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0_ring: Option<Ring>,
    /// Paths per start point.
    pub n_paths: usize,
    #[serde(default)]
    pub endpoint_handling: EndpointHandling,
    /// Endpoint fed to conditioned networks and used as the target of exact
    /// scores; defaults to the fixed training endpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    #[serde(default)]
    pub score: ScoreSource,
}

/// Which metrics `evaluate` reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricRequest {
    /// Score error when an exact score exists, endpoint statistics always.
    #[default]
    Auto,
    /// Score error is required; models without an exact score are an error.
    ScoreError,
    Endpoint,
}

fn default_cutoff_fraction() -> f64 {
    0.95
}
fn default_hit_radius() -> f64 {
    0.3
}
fn default_eval_paths() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationBlock {
    #[serde(default = "default_cutoff_fraction")]
    pub t_cutoff_fraction: f64,
    #[serde(default = "default_hit_radius")]
    pub hit_radius: f64,
    /// Exact bridges used as evaluation states for the score error.
    #[serde(default = "default_eval_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub metrics: MetricRequest,
}

impl Default for EvaluationBlock {
    fn default() -> Self {
        Self {
            t_cutoff_fraction: default_cutoff_fraction(),
            hit_radius: default_hit_radius(),
            n_paths: default_eval_paths(),
            metrics: MetricRequest::Auto,
        }
    }
}

fn default_functionals() -> Vec<Functional> {
    Functional::all().to_vec()
}
fn default_z_threshold() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdjointCheckBlock {
    pub y: Vec<f64>,
    pub n_paths: usize,
    #[serde(default)]
    pub t0: f64,
    #[serde(default = "default_functionals")]
    pub functionals: Vec<Functional>,
    #[serde(default = "default_z_threshold")]
    pub z_threshold: f64,
}

/// A parsed config together with the hash of its source bytes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunConfig {
    /// Parses JSON text; errors carry serde's line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<LoadedConfig> {
        let bytes = std::fs::read(path)?;
        let text = String::from_utf8(bytes.clone()).map_err(|_| Error::invalid("config", "file is not valid UTF-8"))?;
        Ok(LoadedConfig {
            config: Self::from_json(&text)?,
            sha256: sha256_hex(&bytes),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.build()?;
        self.time_grid()?;
        if let Some(t) = &self.training {
            self.train_config_from(t).validate()?;
        }
        let d = self.model.dim();
        if let Some(s) = &self.sampling {
            if s.n_paths == 0 {
                return Err(Error::invalid("sampling.n_paths", "need at least one path"));
            }
            for x0 in &s.x0 {
                check_dim("sampling.x0", d, x0.len())?;
            }
            if let Some(ring) = &s.x0_ring {
                if d != 2 {
                    return Err(Error::invalid(
                        "sampling.x0_ring",
                        "ring starts need a 2-dimensional model",
                    ));
                }
                if ring.count == 0 || !(ring.radius.is_finite() && ring.radius >= 0.0) {
                    return Err(Error::invalid(
                        "sampling.x0_ring",
                        "need count ≥ 1 and a finite radius ≥ 0",
                    ));
                }
            }
            if let Some(y) = &s.y {
                check_dim("sampling.y", d, y.len())?;
            }
        }
        if let Some(e) = &self.evaluation {
            if !(e.t_cutoff_fraction > 0.0 && e.t_cutoff_fraction < 1.0) {
                return Err(Error::invalid("evaluation.t_cutoff_fraction", "must lie in (0, 1)"));
            }
            if !(e.hit_radius > 0.0) {
                return Err(Error::invalid("evaluation.hit_radius", "must be positive"));
            }
            if e.n_paths == 0 {
                return Err(Error::invalid("evaluation.n_paths", "need at least one path"));
            }
        }
        if let Some(a) = &self.adjoint_check {
            check_dim("adjoint_check.y", d, a.y.len())?;
            if a.n_paths == 0 {
                return Err(Error::invalid("adjoint_check.n_paths", "need at least one path"));
            }
            if !(a.t0 >= 0.0 && a.t0 < self.grid.horizon) {
                return Err(Error::invalid("adjoint_check.t0", "must lie in [0, horizon)"));
            }
        }
        Ok(())
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::from_zero(self.grid.horizon, self.grid.steps)
    }

    fn train_config_from(&self, t: &TrainingBlock) -> TrainConfig {
        TrainConfig {
            model: self.model.clone(),
            horizon: self.grid.horizon,
            steps: self.grid.steps,
            batch_size: t.batch_size,
            iterations: t.iterations,
            optimizer: t.optimizer,
            network: t.network.clone(),
            seed: self.seed,
            endpoint: t.endpoint.clone(),
            weight_mode: t.weight_mode,
            metric: t.metric,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = self.training.as_ref().ok_or_else(|| missing("training"))?;
        Ok(self.train_config_from(t))
    }

    /// Start points from `sampling.x0` followed by the ring, if any.
    pub fn start_points(&self) -> Result<Vec<Vec<f64>>> {
        let s = self.sampling.as_ref().ok_or_else(|| missing("sampling"))?;
        let mut starts = s.x0.clone();
        if let Some(ring) = s.x0_ring {
            for k in 0..ring.count {
                let angle = 2.0 * std::f64::consts::PI * k as f64 / ring.count as f64;
                starts.push(vec![ring.radius * angle.cos(), ring.radius * angle.sin()]);
            }
        }
        if starts.is_empty() {
            return Err(Error::invalid(
                "sampling",
                "give at least one start in `x0` or `x0_ring`",
            ));
        }
        Ok(starts)
    }

    /// The single endpoint bridges are conditioned on, if one is known.
    pub fn target_endpoint(&self) -> Option<Vec<f64>> {
        self.sampling.as_ref().and_then(|s| s.y.clone()).or_else(|| {
            self.training
                .as_ref()
                .and_then(|t| t.endpoint.fixed_endpoint().map(<[f64]>::to_vec))
        })
    }
}

pub(crate) fn missing(block: &str) -> Error {
    Error::Unsupported(format!("config has no `{block}` block"))
}

fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
