//! Gaussian variational inference on the Bures-Wasserstein manifold.
//!
//! This crate fits full-covariance Gaussian approximations to unnormalized
//! target densities by gradient descent in the 2-Wasserstein geometry,
//! using importance-weighted objectives (the IW-ELBO and its alpha-tempered
//! generalization). It also ships the Euclidean ADAM baselines the
//! experiments compare against, gradient signal-to-noise diagnostics,
//! importance-sampling quality metrics, and a small experiment harness.
//!
//! Modules:
//! - [`gaussian`]: the Gaussian state, its densities, and the manifold update.
//! - [`targets`]: benchmark targets (Gaussian, mixture "eggbox", banana,
//!   Bayesian logistic regression) behind the [`targets::TargetModel`] trait.
//! - [`objectives`]: Monte Carlo estimators of the bound values.
//! - [`gradients`]: pointwise Wasserstein gradients and the (a, S) manifold
//!   gradient estimators, with Hessian-based and Hessian-free paths.
//! - [`optimizers`]: the descent loop plus ADAM full-covariance and
//!   mean-field baselines.
//! - [`diagnostics`]: SNR sweeps, effective sample size, importance-sampling
//!   moments, a random-walk Metropolis reference.
//! - [`harness`]: config-driven experiment runner behind the `bwvi` binary.
//!
//! The runnable examples under `examples/` each exercise one capability
//! end to end; start with `cargo run --release --example gaussian_fixed_point`.

pub mod diagnostics;
pub mod error;
pub mod gaussian;
pub mod gradients;
pub mod harness;
pub mod math;
pub mod objectives;
pub mod optimizers;
pub mod stream;
pub mod targets;

pub use error::{Error, Result};
pub use gaussian::{GaussianState, TangentVector};
pub use stream::{substream, Stream};

/// Crate version embedded in emitted result files.
pub fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}
