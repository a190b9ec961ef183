use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scorenet::ScoreNetwork;

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    /// When set, training anneals the rate to this value on a cosine schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_learning_rate: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_eps(),
            final_learning_rate: None,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(name, format!("must lie in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon", "must be positive"));
        }
        if let Some(lr) = self.final_learning_rate {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::invalid("final_learning_rate", "must be positive"));
            }
        }
        Ok(())
    }

    /// Learning rate for `iteration` out of `total`.
    pub fn learning_rate_at(&self, iteration: usize, total: usize) -> f64 {
        match self.final_learning_rate {
            None => self.learning_rate,
            Some(end) => {
                let frac = if total > 1 {
                    iteration as f64 / (total - 1) as f64
                } else {
                    0.0
                };
                end + 0.5 * (self.learning_rate - end) * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

/// Adaptive-moment optimizer state with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, num_params: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            first: vec![0.0; num_params],
            second: vec![0.0; num_params],
            steps: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update. Gradients are checked before any parameter moves.
    pub fn step(&mut self, net: &mut ScoreNetwork, grads: &[f64]) -> Result<()> {
        if grads.len() != net.num_params() || grads.len() != self.first.len() {
            return Err(Error::DimensionMismatch {
                context: "optimizer gradients",
                expected: self.first.len(),
                actual: grads.len(),
            });
        }
        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(net.param_name(bad)));
        }
        self.steps += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            ..
        } = self.config;
        let bias1 = 1.0 - beta1.powf(self.steps as f64);
        let bias2 = 1.0 - beta2.powf(self.steps as f64);
        for (((p, g), m), v) in net
            .params_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}
