//! Model providers: mapping a parameter vector θ to the objects the
//! estimation stack consumes — a [`StateSpaceModel`] for the macro
//! series, a [`MicroFamily`] scoring cross-section records given a
//! state path, and an affine map from the state to population moments
//! for the moment-based route.
//!
//! Two desk-scale providers ship with the crate: [`LinearGaussianToy`],
//! whose joint likelihood has a closed form (the oracle for unbiasedness
//! and pseudo-marginal checks), and [`StylizedHousehold`], whose cross
//! sections mix a point mass at zero assets with an
//! exponential-polynomial continuous part and lognormal income
//! heterogeneity. Both are configured from TOML (see [`config`]); the
//! builders are pure functions of θ.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::likelihood::{full_info_loglik, MicroFamily};
use crate::microdens::{MicroBlock, MicroDataset};
use crate::momentbased::{augmented_moment_loglik, AffineMomentMap};
use crate::rng;
use crate::statespace::{kalman_filter, simulate, StateSpaceModel};

mod config;
mod household;
mod policy;
mod toy;

pub use config::{load_provider, provider_from_toml};
pub use household::StylizedHousehold;
pub use policy::SavingsPolicy;
pub use toy::{toy_exact_posterior, LinearGaussianToy, ToyParam};

/// Everything [`augmented_moment_loglik`] needs for one dataset: the
/// periods carrying moment rows, the observed moment vectors, the
/// model-implied affine map, and the measurement-error covariance.
#[derive(Debug, Clone)]
pub struct MomentInputs {
    pub times: Vec<usize>,
    pub observed: Vec<DVector<f64>>,
    pub map: AffineMomentMap,
    pub noise: DMatrix<f64>,
}

/// A parametric model exposed to the estimation stack. Builders must be
/// deterministic in θ; randomness belongs to the likelihood layer.
pub trait ModelProvider: Send + Sync {
    /// Short identifier used in manifests and error messages.
    fn name(&self) -> &str;

    /// Names of the free parameters, in θ order.
    fn param_names(&self) -> Vec<String>;

    /// Per-coordinate prior box `(lower, upper)` for the free parameters.
    fn param_bounds(&self) -> (Vec<f64>, Vec<f64>);

    /// Default chain starting point.
    fn init_theta(&self) -> DVector<f64>;

    /// θ at the provider's calibrated values — the data-generating point
    /// for simulation runs. Defaults to the chain starting point.
    fn calibrated_theta(&self) -> DVector<f64> {
        self.init_theta()
    }

    /// Column names for the micro observation vector, in record order.
    fn micro_names(&self) -> Vec<String>;

    fn dim(&self) -> usize {
        self.param_names().len()
    }

    /// Linear state space for the macro block at θ.
    fn build_state_space(&self, theta: &DVector<f64>) -> Result<StateSpaceModel>;

    /// Cross-section density family at θ (evaluated lazily per state, so
    /// infeasible distribution parameters surface only for the states
    /// actually visited).
    fn micro_family(&self, theta: &DVector<f64>) -> Result<Box<dyn MicroFamily>>;

    /// Affine map `z ↦ population moments` for the moment-based route.
    fn moment_map(&self, theta: &DVector<f64>) -> Result<AffineMomentMap>;

    /// Compress a dataset into moment observations matching
    /// [`ModelProvider::moment_map`]'s rows for the given order.
    fn moment_inputs(
        &self,
        theta: &DVector<f64>,
        data: &MicroDataset,
        order: usize,
    ) -> Result<MomentInputs>;
}

/// Check that θ is finite, has the provider's dimension, and lies inside
/// the parameter box.
pub fn check_theta(provider: &dyn ModelProvider, theta: &DVector<f64>) -> Result<()> {
    if theta.len() != provider.dim() {
        return invalid(format!(
            "{} expects {} free parameters, got {}",
            provider.name(),
            provider.dim(),
            theta.len()
        ));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return invalid("parameter vector must be finite");
    }
    let (lower, upper) = provider.param_bounds();
    for (k, name) in provider.param_names().iter().enumerate() {
        if theta[k] < lower[k] || theta[k] > upper[k] {
            return invalid(format!(
                "parameter {name} = {} outside its box [{}, {}]",
                theta[k], lower[k], upper[k]
            ));
        }
    }
    Ok(())
}

/// Build the full triple at θ: state space, micro family, moment map.
pub fn build(
    provider: &dyn ModelProvider,
    theta: &DVector<f64>,
) -> Result<(StateSpaceModel, Box<dyn MicroFamily>, AffineMomentMap)> {
    Ok((
        provider.build_state_space(theta)?,
        provider.micro_family(theta)?,
        provider.moment_map(theta)?,
    ))
}

/// One simulated joint dataset: the latent state path, the macro
/// observations, and micro cross sections at the requested periods.
#[derive(Debug, Clone)]
pub struct SimulatedJoint {
    pub states: Vec<DVector<f64>>,
    pub x: Vec<DVector<f64>>,
    pub micro: MicroDataset,
}

/// Simulate `horizon` macro periods and a cross section of `n_per` micro
/// records at each `t ∈ micro_times`, all deterministically in `seed`
/// (macro path on the root stream, block `k` on substream `10^6 + k`).
pub fn simulate_joint(
    provider: &dyn ModelProvider,
    theta: &DVector<f64>,
    horizon: usize,
    micro_times: &[usize],
    n_per: usize,
    seed: u64,
) -> Result<SimulatedJoint> {
    check_theta(provider, theta)?;
    if micro_times.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("micro observation times must be strictly increasing");
    }
    if micro_times.iter().any(|&t| t == 0 || t > horizon) {
        return invalid("micro observation times must lie in 1..=horizon");
    }
    let model = provider.build_state_space(theta)?;
    let family = provider.micro_family(theta)?;
    let path = simulate(&model, horizon, seed)?;
    let blocks = micro_times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let mut rng = rng::substream(seed, 1_000_000 + k as u64);
            Ok(MicroBlock {
                t,
                records: family.simulate(t, &path.states, n_per, &mut rng)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulatedJoint {
        states: path.states,
        x: path.obs,
        micro: MicroDataset::new(blocks)?,
    })
}

/// Which likelihood the estimator evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LikelihoodMethod {
    /// Macro Kalman likelihood plus the unbiased micro estimate over
    /// `n_draws` simulation-smoother paths.
    FullInfo { n_draws: usize },
    /// Macro Kalman likelihood alone (micro data ignored).
    MacroOnly,
    /// Macro likelihood augmented with per-period moment rows of the
    /// given order.
    Moments { order: usize },
}

/// [`crate::mcmc::LogPostEstimator`] over a provider and a dataset.
///
/// Likelihood failures at a proposed θ — an unstable transition, an
/// infeasible distribution-parameter path, a stalled density fit —
/// report `−∞` rather than aborting the chain: a flat prior box may
/// well contain parameter points where the model is undefined, and the
/// Metropolis step simply never accepts them. I/O errors still
/// propagate. With `fixed_noise_seed` set, every call reuses that seed
/// (likelihood-surface plots); leave it `None` for MCMC, which requires
/// fresh smoothing randomness per proposal.
pub struct ProviderEstimator<'a> {
    provider: &'a dyn ModelProvider,
    x: &'a [DVector<f64>],
    micro: Option<&'a MicroDataset>,
    method: LikelihoodMethod,
    fixed_noise_seed: Option<u64>,
}

impl<'a> ProviderEstimator<'a> {
    pub fn new(
        provider: &'a dyn ModelProvider,
        x: &'a [DVector<f64>],
        micro: Option<&'a MicroDataset>,
        method: LikelihoodMethod,
    ) -> Result<ProviderEstimator<'a>> {
        match method {
            LikelihoodMethod::FullInfo { n_draws } => {
                if n_draws == 0 {
                    return invalid("full-information likelihood needs at least one draw");
                }
                if micro.is_none() {
                    return invalid("full-information likelihood needs micro data");
                }
            }
            LikelihoodMethod::Moments { order } => {
                if !(1..=3).contains(&order) {
                    return invalid(format!("moment order {order} outside 1..=3"));
                }
                if micro.is_none() {
                    return invalid("moment-based likelihood needs micro data");
                }
            }
            LikelihoodMethod::MacroOnly => {}
        }
        if x.is_empty() {
            return invalid("estimator needs a non-empty macro series");
        }
        Ok(ProviderEstimator {
            provider,
            x,
            micro,
            method,
            fixed_noise_seed: None,
        })
    }

    /// Reuse one noise seed across calls (deterministic surfaces, NOT
    /// valid inside MCMC).
    pub fn with_fixed_noise_seed(mut self, seed: u64) -> Self {
        self.fixed_noise_seed = Some(seed);
        self
    }

    /// Log likelihood at θ under the configured method. `noise_seed`
    /// drives the smoother draws for the full-information estimate (and
    /// is ignored by the deterministic methods) unless a fixed smoother
    /// seed overrides it.
    pub fn loglik(&self, theta: &DVector<f64>, noise_seed: u64) -> Result<f64> {
        check_theta(self.provider, theta)?;
        match self.method {
            LikelihoodMethod::MacroOnly => {
                let model = self.provider.build_state_space(theta)?;
                Ok(kalman_filter(&model, self.x)?.loglik)
            }
            LikelihoodMethod::FullInfo { n_draws } => {
                let model = self.provider.build_state_space(theta)?;
                let family = self.provider.micro_family(theta)?;
                let data = self.micro.expect("checked at construction");
                let seed = self.fixed_noise_seed.unwrap_or(noise_seed);
                Ok(full_info_loglik(&model, family.as_ref(), self.x, data, n_draws, seed)?.total())
            }
            LikelihoodMethod::Moments { order } => {
                let model = self.provider.build_state_space(theta)?;
                let data = self.micro.expect("checked at construction");
                let inputs = self.provider.moment_inputs(theta, data, order)?;
                augmented_moment_loglik(
                    &model,
                    self.x,
                    &inputs.times,
                    &inputs.observed,
                    &inputs.map,
                    &inputs.noise,
                )
            }
        }
    }
}

impl crate::mcmc::LogPostEstimator for ProviderEstimator<'_> {
    fn dim(&self) -> usize {
        self.provider.dim()
    }

    fn log_post(&self, theta: &DVector<f64>, noise_seed: u64) -> Result<f64> {
        match self.loglik(theta, noise_seed) {
            Ok(v) => Ok(v),
            Err(crate::Error::Io(e)) => Err(crate::Error::Io(e)),
            Err(_) => Ok(f64::NEG_INFINITY), // undefined model at this θ: impossible, not fatal
        }
    }
}
