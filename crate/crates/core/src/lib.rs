//! Gaussian-process modulated Hawkes processes.
//!
//! The baseline intensity `mu(t) = f(t)^2` and the triggering kernel
//! `phi(tau) = g(tau)^2` both carry sparse variational Gaussian-process
//! priors. Fitting alternates a branching-structure E-step with closed-form
//! stationarity solves for the diagonal variational covariances.
//!
//! Modules:
//! - [`kernels`]: squared-exponential kernel, Gram and Psi matrices, SPD and Toeplitz solves
//! - [`gp`]: sparse posterior moments and the analytic ELBO pieces
//! - [`emv`]: the EM-variational fitting engine
//! - [`simulate`]: Ogata thinning and the synthetic ground-truth cases
//! - [`baselines`]: parametric exponential Hawkes MLE and the MISD histogram EM
//! - [`eval`]: log-likelihood, estimation error, time rescaling, KS and prediction accuracy
//! - [`fitted`]: one serialisable enum over all model kinds

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod emv;
pub mod error;
pub mod eval;
pub mod events;
pub mod exec;
pub mod fitted;
pub mod gp;
pub mod kernels;
pub mod model;
pub mod quad;
pub mod simulate;

pub use error::{Error, Result};
pub use events::EventSequence;
pub use exec::Exec;
pub use fitted::FittedModel;
pub use model::HawkesModel;
