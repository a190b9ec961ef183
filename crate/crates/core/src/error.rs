use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unknown model `{0}` (registered: ou, brownian, cell)")]
    UnknownModel(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite state on path {path} at step {step}")]
    NonFiniteState { path: usize, step: usize },

    #[error("non-finite log-weight on path {path} at step {step}")]
    NonFiniteWeight { path: usize, step: usize },

    #[error("drift offset exploded on path {path} at step {step}: |Σ·s| = {magnitude:e} > {bound:e}")]
    Explosion {
        path: usize,
        step: usize,
        magnitude: f64,
        bound: f64,
    },

    #[error("diffusion matrix Σ is singular at t = {t}, x = {x:?}")]
    SingularDiffusion { t: f64, x: Vec<f64> },

    #[error("non-finite loss contribution on path {path} at step {step}")]
    NonFiniteLoss { path: usize, step: usize },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("training failed at iteration {iteration}: {source}")]
    Training {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("score evaluated at t = {t} which is not before the horizon T = {horizon}")]
    AtHorizon { t: f64, horizon: f64 },

    #[error("{0}")]
    Unsupported(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFiniteState { .. }
            | Error::NonFiniteWeight { .. }
            | Error::Explosion { .. }
            | Error::SingularDiffusion { .. }
            | Error::NonFiniteLoss { .. }
            | Error::NonFiniteGradient(_) => true,
            Error::Training { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
