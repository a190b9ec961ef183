//! Forward diffusion bridges learned by score matching on adjoint processes.
//!
//! The adjoint process of an SDE runs the reversed dynamics from the
//! conditioning endpoint `y`; its weighted marginals are the transition
//! densities `p(t, ·; T, y)`, so regressing a network onto one-step
//! transition scores along adjoint paths learns `∇_x log p(t, x; T, y)`
//! directly. The learned score then drives the forward bridge
//! `dX = (f + Σ s) dt + σ dW`.

pub mod adjoint;
pub mod bridge;
pub mod cli;
pub mod error;
pub mod integrator;
pub mod models;
pub mod scorenet;
pub mod training;

pub use error::{Error, Result};
