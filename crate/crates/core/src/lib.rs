//! Particle-based variational inference with the mollified relative entropy.
//!
//! The variational family is the set of equal-weight Gaussian mixtures
//! `k_eps * mu_n` whose components share the isotropic standard deviation
//! `eps`. Component means are particles; Wasserstein gradient descent on the
//! mollified relative entropy `F_eps(mu) = KL(k_eps * mu | mu_star)` becomes
//! plain gradient descent on the particle positions, with every integral
//! against the kernel estimated by Monte Carlo.
//!
//! Module map:
//!
//! * [`kernel`]: Gaussian kernel and mixture log-density/score primitives.
//! * [`target`]: target measure `mu_star ∝ exp(-V)`.
//! * [`particles`]: the atomic measure `mu_n` and its snapshots.
//! * [`estimators`]: Monte Carlo estimators for gradients, objective, KL and `C²`.
//! * [`optimizer`]: the descent loop and per-iteration diagnostics.
//! * [`theory`]: executable checks of the descent lemma, rates and Hessian limits.

pub mod error;
pub mod estimators;
pub mod kernel;
pub mod optimizer;
pub mod particles;
pub mod rng;
pub mod stats;
pub mod target;
pub mod theory;

pub use error::{Error, Result};

pub use kernel::{GaussianMixture, KernelParams};

pub use estimators::{EstimatorSettings, GradNormEstimate, GradientEstimate, ScalarEstimate};
pub use optimizer::{DiagnosticsRecord, RunConfig, RunOutput};
pub use particles::ParticleState;
pub use target::{TargetKind, TargetModel, TargetSpec};

/// Library version string written into run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
