use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid `t0 = t_0 < t_1 < … < t_L = T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, horizon: f64, steps: usize) -> Result<Self> {
        if !(t0.is_finite() && horizon.is_finite()) {
            return Err(Error::invalid("grid", "endpoints must be finite"));
        }
        if horizon <= t0 {
            return Err(Error::invalid(
                "grid",
                format!("horizon {horizon} must exceed start {t0}"),
            ));
        }
        if steps == 0 {
            return Err(Error::invalid("steps", "need at least one step"));
        }
        Ok(Self { t0, horizon, steps })
    }

    /// Grid on `[0, horizon]`.
    pub fn from_zero(horizon: f64, steps: usize) -> Result<Self> {
        Self::new(0.0, horizon, steps)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of steps `L`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn span(&self) -> f64 {
        self.horizon - self.t0
    }

    pub fn dt(&self) -> f64 {
        self.span() / self.steps as f64
    }

    /// Node `t_ℓ`; the last node is exactly the horizon.
    pub fn node(&self, step: usize) -> f64 {
        debug_assert!(step <= self.steps);
        if step == self.steps {
            self.horizon
        } else {
            self.t0 + step as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(|l| self.node(l))
    }

    /// Reflected node `t̂_i = T − t_{L−i}` (for a grid starting at zero this
    /// coincides with `t_i` up to rounding).
    pub fn reflected_node(&self, i: usize) -> f64 {
        self.horizon - self.node(self.steps - i) + self.t0
    }
}
