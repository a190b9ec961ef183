//! SDE models `dX = f(t, X) dt + σ(t, X) dW` together with the derivative
//! information the adjoint construction needs.
//!
//! Derivatives are coded by hand for every model and cross-checked against
//! central finite differences in the tests below.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `d`-dimensional diffusion driven by `m`-dimensional Brownian noise.
pub trait SdeModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// State dimension `d`.
    fn dim(&self) -> usize;

    /// Driving-noise dimension `m`.
    fn noise_dim(&self) -> usize;

    fn drift(&self, t: f64, x: &[f64]) -> Vec<f64>;

    /// `σ(t, x)` as a `d × m` matrix.
    fn diffusion(&self, t: f64, x: &[f64]) -> DMatrix<f64>;

    /// `Σ = σσᵀ`.
    fn sigma_sq(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let s = self.diffusion(t, x);
        let prod = &s * s.transpose();
        // symmetrize so that Σ == Σᵀ holds bitwise
        (&prod + prod.transpose()) * 0.5
    }

    /// Row divergence of Σ: entry `i` is `Σ_j ∂Σ^{ij}/∂x^j`.
    fn sigma_sq_div(&self, t: f64, x: &[f64]) -> Vec<f64>;

    /// `Σ_{i,j} ∂²Σ^{ij}/∂x^i∂x^j`.
    fn sigma_sq_hess_trace(&self, t: f64, x: &[f64]) -> f64;

    /// `Σ_i ∂f^i/∂x^i`.
    fn drift_div(&self, t: f64, x: &[f64]) -> f64;

    fn time_homogeneous(&self) -> bool;

    /// `Some(s)` when `σ ≡ s·I` (square noise, constant isotropic diffusion).
    fn isotropic_scale(&self) -> Option<f64> {
        None
    }
}

pub type SharedModel = Arc<dyn SdeModel>;

fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            name,
            format!("must be positive and finite, got {value}"),
        ))
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::invalid("dim", "must be at least 1"));
    }
    Ok(())
}

/// Ornstein–Uhlenbeck process `dX = −θX dt + σ dW`.
#[derive(Debug, Clone)]
pub struct OrnsteinUhlenbeck {
    pub theta: f64,
    pub sigma: f64,
    dim: usize,
}

impl OrnsteinUhlenbeck {
    pub fn new(theta: f64, sigma: f64, dim: usize) -> Result<Self> {
        check_positive("theta", theta)?;
        check_positive("sigma", sigma)?;
        check_dim(dim)?;
        Ok(Self { theta, sigma, dim })
    }
}

impl SdeModel for OrnsteinUhlenbeck {
    fn name(&self) -> &str {
        "ou"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn noise_dim(&self) -> usize {
        self.dim
    }
    fn drift(&self, _t: f64, x: &[f64]) -> Vec<f64> {
        x.iter().map(|xi| -self.theta * xi).collect()
    }
    fn diffusion(&self, _t: f64, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal_element(self.dim, self.dim, self.sigma)
    }
    fn sigma_sq(&self, _t: f64, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal_element(self.dim, self.dim, self.sigma * self.sigma)
    }
    fn sigma_sq_div(&self, _t: f64, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim]
    }
    fn sigma_sq_hess_trace(&self, _t: f64, _x: &[f64]) -> f64 {
        0.0
    }
    fn drift_div(&self, _t: f64, _x: &[f64]) -> f64 {
        -self.theta * self.dim as f64
    }
    fn time_homogeneous(&self) -> bool {
        true
    }
    fn isotropic_scale(&self) -> Option<f64> {
        Some(self.sigma)
    }
}

/// Scaled Brownian motion `dX = σ dW`.
#[derive(Debug, Clone)]
pub struct Brownian {
    pub sigma: f64,
    dim: usize,
}

impl Brownian {
    pub fn new(sigma: f64, dim: usize) -> Result<Self> {
        check_positive("sigma", sigma)?;
        check_dim(dim)?;
        Ok(Self { sigma, dim })
    }
}

impl SdeModel for Brownian {
    fn name(&self) -> &str {
        "brownian"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn noise_dim(&self) -> usize {
        self.dim
    }
    fn drift(&self, _t: f64, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim]
    }
    fn diffusion(&self, _t: f64, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal_element(self.dim, self.dim, self.sigma)
    }
    fn sigma_sq(&self, _t: f64, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal_element(self.dim, self.dim, self.sigma * self.sigma)
    }
    fn sigma_sq_div(&self, _t: f64, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim]
    }
    fn sigma_sq_hess_trace(&self, _t: f64, _x: &[f64]) -> f64 {
        0.0
    }
    fn drift_div(&self, _t: f64, _x: &[f64]) -> f64 {
        0.0
    }
    fn time_homogeneous(&self) -> bool {
        true
    }
    fn isotropic_scale(&self) -> Option<f64> {
        Some(self.sigma)
    }
}

const CELL_K: f64 = 0.0625; // 2⁻⁴

/// Two-gene cell differentiation model with mutual repression and
/// self-activation:
///
/// ```text
/// f₁ = x₁⁴/(2⁻⁴ + x₁⁴) + 2⁻⁴/(2⁻⁴ + x₂⁴) − x₁
/// f₂ = x₂⁴/(2⁻⁴ + x₂⁴) + 2⁻⁴/(2⁻⁴ + x₁⁴) − x₂
/// ```
///
/// Each coordinate has its own noise channel (`σ = σ·I₂`); the two equations
/// are driven by independent Brownian motions rather than one shared scalar.
#[derive(Debug, Clone)]
pub struct CellModel {
    pub sigma: f64,
}

impl CellModel {
    pub fn new(sigma: f64) -> Result<Self> {
        check_positive("sigma", sigma)?;
        Ok(Self { sigma })
    }

    fn activation(u: f64) -> f64 {
        let u4 = u.powi(4);
        u4 / (CELL_K + u4)
    }

    fn repression(u: f64) -> f64 {
        CELL_K / (CELL_K + u.powi(4))
    }

    /// `d/du [u⁴/(k + u⁴)] = 4u³k/(k + u⁴)²`
    fn activation_prime(u: f64) -> f64 {
        let denom = CELL_K + u.powi(4);
        4.0 * u.powi(3) * CELL_K / (denom * denom)
    }
}

impl SdeModel for CellModel {
    fn name(&self) -> &str {
        "cell"
    }
    fn dim(&self) -> usize {
        2
    }
    fn noise_dim(&self) -> usize {
        2
    }
    fn drift(&self, _t: f64, x: &[f64]) -> Vec<f64> {
        let (x1, x2) = (x[0], x[1]);
        vec![
            Self::activation(x1) + Self::repression(x2) - x1,
            Self::activation(x2) + Self::repression(x1) - x2,
        ]
    }
    fn diffusion(&self, _t: f64, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal_element(2, 2, self.sigma)
    }
    fn sigma_sq(&self, _t: f64, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal_element(2, 2, self.sigma * self.sigma)
    }
    fn sigma_sq_div(&self, _t: f64, _x: &[f64]) -> Vec<f64> {
        vec![0.0; 2]
    }
    fn sigma_sq_hess_trace(&self, _t: f64, _x: &[f64]) -> f64 {
        0.0
    }
    fn drift_div(&self, _t: f64, x: &[f64]) -> f64 {
        Self::activation_prime(x[0]) - 1.0 + Self::activation_prime(x[1]) - 1.0
    }
    fn time_homogeneous(&self) -> bool {
        true
    }
    fn isotropic_scale(&self) -> Option<f64> {
        Some(self.sigma)
    }
}

pub fn make_ou(theta: f64, sigma: f64, dim: usize) -> Result<SharedModel> {
    Ok(Arc::new(OrnsteinUhlenbeck::new(theta, sigma, dim)?))
}

pub fn make_brownian(sigma: f64, dim: usize) -> Result<SharedModel> {
    Ok(Arc::new(Brownian::new(sigma, dim)?))
}

pub fn make_cell_model(sigma: f64) -> Result<SharedModel> {
    Ok(Arc::new(CellModel::new(sigma)?))
}

fn one() -> f64 {
    1.0
}
fn one_dim() -> usize {
    1
}
fn cell_sigma() -> f64 {
    0.1
}

/// Serializable description of a built-in model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Ou {
        #[serde(default = "one")]
        theta: f64,
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default = "one_dim")]
        dim: usize,
    },
    Brownian {
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default = "one_dim")]
        dim: usize,
    },
    Cell {
        #[serde(default = "cell_sigma")]
        sigma: f64,
    },
}

impl ModelSpec {
    pub fn build(&self) -> Result<SharedModel> {
        match *self {
            ModelSpec::Ou { theta, sigma, dim } => make_ou(theta, sigma, dim),
            ModelSpec::Brownian { sigma, dim } => make_brownian(sigma, dim),
            ModelSpec::Cell { sigma } => make_cell_model(sigma),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Ou { .. } => "ou",
            ModelSpec::Brownian { .. } => "brownian",
            ModelSpec::Cell { .. } => "cell",
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            ModelSpec::Ou { dim, .. } | ModelSpec::Brownian { dim, .. } => dim,
            ModelSpec::Cell { .. } => 2,
        }
    }
}

/// Named catalog of the built-in models with their default parameters.
#[derive(Debug, Clone)]
pub struct ModelRegistry {
    entries: BTreeMap<&'static str, ModelSpec>,
}

impl Default for ModelRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl ModelRegistry {
    pub fn builtin() -> Self {
        let entries = [
            ModelSpec::Ou {
                theta: 1.0,
                sigma: 1.0,
                dim: 1,
            },
            ModelSpec::Brownian { sigma: 1.0, dim: 1 },
            ModelSpec::Cell { sigma: cell_sigma() },
        ]
        .into_iter()
        .map(|spec| (spec.name(), spec))
        .collect();
        Self { entries }
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    /// Default parameters for `name`.
    pub fn defaults(&self, name: &str) -> Result<&ModelSpec> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownModel(name.to_string()))
    }

    pub fn build(&self, name: &str) -> Result<SharedModel> {
        self.defaults(name)?.build()
    }
}
