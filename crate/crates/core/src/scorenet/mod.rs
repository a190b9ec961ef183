//! Fully connected score network `s_θ(t, x)` or `s_θ(t, x, y)`.
//!
//! Input features are `[sin(2^k π t/T), cos(2^k π t/T)]_{k < K}` followed by
//! `x` (and `y` for conditioned networks). Hidden layers use SiLU; the output
//! layer is linear and zero-initialized, so a fresh network returns the zero
//! score.

mod adam;
mod linalg;

use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use adam::{AdamConfig, OptimizerState};

use crate::error::{Error, Result};

fn default_hidden() -> Vec<usize> {
    vec![32; 4]
}

fn default_time_features() -> usize {
    8
}

/// Architecture descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub state_dim: usize,
    /// Whether the endpoint `y` is an input.
    #[serde(default)]
    pub conditioned: bool,
    #[serde(default = "default_time_features")]
    pub time_features: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Horizon `T` used to scale the time embedding.
    pub horizon: f64,
}

impl NetworkConfig {
    pub fn new(state_dim: usize, horizon: f64) -> Self {
        Self {
            state_dim,
            conditioned: false,
            time_features: default_time_features(),
            hidden: default_hidden(),
            horizon,
        }
    }

    pub fn input_dim(&self) -> usize {
        2 * self.time_features + self.state_dim * if self.conditioned { 2 } else { 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 {
            return Err(Error::invalid("state_dim", "must be at least 1"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden", "layer widths must be positive"));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::invalid("horizon", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layer {
    input: usize,
    output: usize,
    /// Offset of the `output × input` weight block; biases follow it.
    offset: usize,
}

impl Layer {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.input * self.output
    }
    fn biases(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.input * self.output;
        start..start + self.output
    }
    fn len(&self) -> usize {
        (self.input + 1) * self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNetwork {
    config: NetworkConfig,
    layers: Vec<Layer>,
    params: Vec<f64>,
}

/// SiLU value and derivative.
fn silu(z: f64) -> (f64, f64) {
    let s = 1.0 / (1.0 + (-z).exp());
    (z * s, s * (1.0 + z * (1.0 - s)))
}

/// Activations recorded by a forward pass, consumed by [`ScoreNetwork::backward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    rows: usize,
    /// Input to each layer (features, then post-activation hidden values).
    inputs: Vec<Vec<f64>>,
    /// Activation derivatives of the hidden layers.
    slopes: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}

impl ScoreNetwork {
    /// Fan-in scaled normal weights, zero biases, zero output layer.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut widths = vec![config.input_dim()];
        widths.extend(&config.hidden);
        widths.push(config.state_dim);
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut offset = 0;
        for w in widths.windows(2) {
            let layer = Layer {
                input: w[0],
                output: w[1],
                offset,
            };
            offset += layer.len();
            layers.push(layer);
        }
        let mut params = vec![0.0; offset];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = layers.len() - 1;
        for layer in &layers[..last] {
            let normal = Normal::new(0.0, 1.0 / (layer.input as f64).sqrt()).expect("valid std");
            for p in &mut params[layer.weights()] {
                *p = normal.sample(&mut rng);
            }
        }
        Ok(Self { config, layers, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn state_dim(&self) -> usize {
        self.config.state_dim
    }

    pub fn is_conditioned(&self) -> bool {
        self.config.conditioned
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Human-readable name of flat parameter `index`, e.g. `layers.2.weight[3,7]`.
    pub fn param_name(&self, index: usize) -> String {
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.weights().contains(&index) {
                let k = index - layer.offset;
                return format!("layers.{l}.weight[{},{}]", k / layer.input, k % layer.input);
            }
            if layer.biases().contains(&index) {
                return format!("layers.{l}.bias[{}]", index - layer.biases().start);
            }
        }
        format!("param[{index}]")
    }

    fn check_inputs(&self, x: &[f64], y: Option<&[f64]>) -> Result<()> {
        let d = self.config.state_dim;
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                context: "network state input",
                expected: d,
                actual: x.len(),
            });
        }
        match (self.config.conditioned, y) {
            (true, Some(y)) if y.len() != d => Err(Error::DimensionMismatch {
                context: "network endpoint input",
                expected: d,
                actual: y.len(),
            }),
            (true, None) => Err(Error::invalid("y", "conditioned network needs an endpoint")),
            (false, Some(_)) => Err(Error::invalid("y", "network is not conditioned on an endpoint")),
            _ => Ok(()),
        }
    }

    /// Writes the feature row for `(t, x[, y])` into `out`.
    pub fn write_features(&self, t: f64, x: &[f64], y: Option<&[f64]>, out: &mut [f64]) {
        let k = self.config.time_features;
        let phase = PI * t / self.config.horizon;
        let mut freq = 1.0;
        for i in 0..k {
            out[2 * i] = (freq * phase).sin();
            out[2 * i + 1] = (freq * phase).cos();
            freq *= 2.0;
        }
        let d = self.config.state_dim;
        out[2 * k..2 * k + d].copy_from_slice(x);
        if let Some(y) = y {
            out[2 * k + d..2 * k + 2 * d].copy_from_slice(y);
        }
    }

    pub fn forward(&self, t: f64, x: &[f64], y: Option<&[f64]>) -> Result<Vec<f64>> {
        self.check_inputs(x, y)?;
        let mut features = vec![0.0; self.config.input_dim()];
        self.write_features(t, x, y, &mut features);
        Ok(self.forward_batch(&features, 1)?.output)
    }

    /// Forward pass over `rows` feature rows laid out row-major.
    pub fn forward_batch(&self, features: &[f64], rows: usize) -> Result<ForwardCache> {
        let input_dim = self.config.input_dim();
        if features.len() != rows * input_dim {
            return Err(Error::DimensionMismatch {
                context: "network features",
                expected: rows * input_dim,
                actual: features.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut slopes = Vec::with_capacity(last);
        let mut current = features.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; rows * layer.output];
            linalg::affine(
                &current,
                rows,
                layer.input,
                &self.params[layer.weights()],
                &self.params[layer.biases()],
                &mut z,
            );
            inputs.push(current);
            if l == last {
                return Ok(ForwardCache {
                    rows,
                    inputs,
                    slopes,
                    output: z,
                });
            }
            let mut slope = z;
            current = vec![0.0; slope.len()];
            for (a, s) in current.iter_mut().zip(slope.iter_mut()) {
                (*a, *s) = silu(*s);
            }
            slopes.push(slope);
        }
        unreachable!("network has an output layer")
    }

    /// Reverse-mode gradient of `Σ upstream ⊙ output` with respect to the
    /// flat parameter vector.
    pub fn backward_cached(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Vec<f64>> {
        let rows = cache.rows;
        let d = self.config.state_dim;
        if upstream.len() != rows * d {
            return Err(Error::DimensionMismatch {
                context: "upstream gradient",
                expected: rows * d,
                actual: upstream.len(),
            });
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = upstream.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let (gw, gb) = grads[layer.offset..layer.offset + layer.len()].split_at_mut(layer.input * layer.output);
            linalg::weight_grads(&delta, &cache.inputs[l], rows, layer.input, layer.output, gw, gb);
            if l == 0 {
                break;
            }
            let mut prev = vec![0.0; rows * layer.input];
            linalg::input_grads(
                &delta,
                rows,
                layer.output,
                &self.params[layer.weights()],
                layer.input,
                &mut prev,
            );
            for (p, &s) in prev.iter_mut().zip(&cache.slopes[l - 1]) {
                *p *= s;
            }
            delta = prev;
        }
        Ok(grads)
    }

    /// Recomputes the forward pass over `features` and backpropagates `upstream`.
    pub fn backward(&self, features: &[f64], rows: usize, upstream: &[f64]) -> Result<Vec<f64>> {
        let cache = self.forward_batch(features, rows)?;
        self.backward_cached(&cache, upstream)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unrecognized format `{}`", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ckpt.version)));
        }
        let mut net = Self::new(ckpt.config, 0)?;
        if ckpt.params.len() != net.params.len() {
            return Err(Error::Checkpoint(format!(
                "architecture has {} parameters but checkpoint holds {}",
                net.params.len(),
                ckpt.params.len()
            )));
        }
        net.params = ckpt.params;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, &self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let ckpt: Checkpoint = serde_json::from_reader(file)?;
        Self::from_checkpoint(ckpt)
    }
}

pub const CHECKPOINT_FORMAT: &str = "bridgeforge-score-network";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk network: architecture descriptor plus the flat parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: NetworkConfig,
    pub params: Vec<f64>,
}
