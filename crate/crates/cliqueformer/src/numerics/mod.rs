//! Differentiable numerical core: tape autodiff, stochastic layers,
//! closed-form divergences, and optimizer updates.

pub mod gaussian;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod optim;

pub use gaussian::{DiagonalGaussian, LOG_VAR_MAX, LOG_VAR_MIN};
pub use gradcheck::grad_check;
pub use graph::{Gradients, Graph, Var};
pub use loss::{categorical_recon_nll, gaussian_recon_nll};
pub use optim::{adamw_update, clip_global_norm, AdamConfig, OptimizerState};
