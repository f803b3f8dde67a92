//! Offline model-based optimization with clique-structured transformer
//! surrogates.
//!
//! The library trains a surrogate whose prediction decomposes over a
//! pre-defined chain of cliques in a learned latent space, regularizes the
//! clique marginals toward a standard-normal prior, and proposes designs
//! by weight-decayed gradient ascent on the latent representation. It also
//! ships the synthetic latent-RBF benchmark suite, reference baselines,
//! and the evaluation harness used by the `cliqueformer` CLI.

pub mod baselines;
pub mod design;
pub mod error;
pub mod experiments;
pub mod fgm;
pub mod io;
pub mod model;
pub mod numerics;
pub mod tasks;
pub mod training;
pub mod rng;

pub use error::{Error, Result};
pub use fgm::CliqueLayout;
pub use rng::SeededRng;
