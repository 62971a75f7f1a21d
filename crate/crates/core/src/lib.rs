//! Simulation-based likelihood machinery for linear-Gaussian state-space
//! models whose states are observed twice over: through aggregate time
//! series `x_t` and through repeated micro cross sections `y_{i,t}` whose
//! sampling density depends on the state.
//!
//! The joint likelihood factors as
//!
//! `p(x, y | θ) = p(x | θ) · E[ ∏_{t,i} p(y_{i,t} | z_t, θ) | x ]`,
//!
//! where the expectation runs over the smoothing distribution of the state
//! path `z` given the macro data alone. [`likelihood::full_info_loglik`]
//! estimates that expectation without bias in levels by averaging the
//! micro likelihood over simulation-smoother draws, which keeps
//! pseudo-marginal MCMC ([`mcmc::adaptive_rwmh`]) exact for any number of
//! draws. [`momentbased`] provides the cheaper alternative of tracking a
//! few cross-sectional moments as extra noisy observables.
//!
//! Module map:
//! - [`statespace`]: Kalman filter/smoother, simulation smoother, simulation.
//! - [`expfam`]: exponential-polynomial densities pinned by moments.
//! - [`microdens`]: micro sampling densities (mixture incomes, selection
//!   truncation, two-period panels) and cross-section utilities.
//! - [`likelihood`]: unbiased full-information estimator and exact toy oracle.
//! - [`momentbased`]: moment observables, their sampling variance, and the
//!   augmented-filter likelihood.
//! - [`mcmc`]: adaptive random-walk Metropolis for noisy posteriors.
//! - [`models`]: model providers (linear-Gaussian toy, stylized household).
//! - [`data`]: CSV interchange for macro series and micro cross sections.

pub mod data;
pub mod error;
pub mod expfam;
pub mod interp;
pub mod likelihood;
pub mod mcmc;
pub mod microdens;
pub mod models;
pub mod momentbased;
pub mod quad;
pub mod rng;
pub mod statespace;
pub mod stats;

pub use error::{Error, Result};
