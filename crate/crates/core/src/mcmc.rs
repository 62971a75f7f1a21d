//! Pseudo-marginal adaptive Random-Walk Metropolis–Hastings.
//!
//! The sampler targets `p(θ | x, y)` through a *noisy but unbiased*
//! likelihood estimate: each proposal is scored once with fresh
//! estimator randomness, the accepted value is stored, and later
//! acceptance ratios reuse the stored value bit-for-bit — never
//! re-evaluating it. Because the estimate is unbiased in levels, the
//! chain's ergodic distribution is the exact posterior regardless of
//! the estimator's noise (pseudo-marginal argument).
//!
//! Proposals mix an adapted component `N(θ, c·Σ̂)` — running chain
//! covariance `Σ̂`, step size `c` tuned toward a target acceptance rate
//! with diminishing adaptation `k^{−decay}` — with a fixed diffuse
//! component that keeps the chain mobile before the adaptation has
//! learned anything. Both components are symmetric, so the acceptance
//! ratio needs no proposal-density correction.
//!
//! Flat box priors reject out-of-box proposals *before* the likelihood
//! is evaluated (no smoother work wasted); general priors supply a log
//! density instead.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{invalid, numeric, Result};
use crate::rng;
use crate::statespace::symmetrize;

/// Noisy log-posterior oracle for pseudo-marginal sampling.
///
/// `log_post(θ, noise_seed)` must return an unbiased-in-levels estimate
/// of the (unnormalized) log posterior whose randomness is a pure
/// function of `noise_seed`; the sampler passes a fresh seed for every
/// proposal. Exact targets simply ignore the seed. Values must be
/// finite or `−∞` (impossible θ).
pub trait LogPostEstimator: Sync {
    fn dim(&self) -> usize;
    fn log_post(&self, theta: &DVector<f64>, noise_seed: u64) -> Result<f64>;
}

/// Log prior density as a closure, for [`PriorSpec::LogDensity`].
pub type LogPriorFn = Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;

/// Prior over θ: flat on a box (evaluated before the likelihood, so
/// out-of-box proposals never touch the estimator) or an arbitrary log
/// density added to the estimator's value.
pub enum PriorSpec {
    FlatBox { lower: Vec<f64>, upper: Vec<f64> },
    LogDensity(LogPriorFn),
}

impl PriorSpec {
    /// Flat prior on `∏ [lower_i, upper_i]`; infinite bounds are allowed.
    pub fn flat_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<PriorSpec> {
        if lower.is_empty() || lower.len() != upper.len() {
            return invalid("prior box needs matching, non-empty bound vectors");
        }
        if !lower.iter().zip(&upper).all(|(l, u)| l < u) {
            return invalid("each prior box must have lower < upper");
        }
        Ok(PriorSpec::FlatBox { lower, upper })
    }

    /// Log prior density at `θ` (`0` inside a flat box, `−∞` outside).
    pub fn log_density(&self, theta: &DVector<f64>) -> f64 {
        match self {
            PriorSpec::FlatBox { lower, upper } => {
                let inside = theta
                    .iter()
                    .zip(lower.iter().zip(upper))
                    .all(|(&v, (&l, &u))| v >= l && v <= u);
                if inside {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            PriorSpec::LogDensity(f) => f(theta),
        }
    }
}

// A boxed closure has no useful Debug output; keep the variant names.
impl fmt::Debug for PriorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorSpec::FlatBox { lower, upper } => f
                .debug_struct("FlatBox")
                .field("lower", lower)
                .field("upper", upper)
                .finish(),
            PriorSpec::LogDensity(_) => f.write_str("LogDensity(..)"),
        }
    }
}

/// Tuning knobs for [`adaptive_rwmh`].
#[derive(Debug)]
pub struct MhSettings {
    /// Total chain length, including burn-in.
    pub n_draws: usize,
    /// Leading draws dropped by summaries and diagnostics.
    pub burn_in: usize,
    /// Acceptance rate the step-size adaptation aims for.
    pub target_accept: f64,
    /// Mixture weight on the adapted proposal component (`1 −` weight
    /// goes to the fixed diffuse component).
    pub adapt_weight: f64,
    /// Per-coordinate standard deviation of the diffuse component.
    pub diffuse_scale: f64,
    /// Diminishing-adaptation exponent: step `k` adjusts `ln c` by
    /// `k^{−decay}·(α_k − target_accept)`.
    pub decay: f64,
    /// Initial step-size multiplier `c` on `Σ̂`.
    pub init_stepsize: f64,
    /// Proposal covariance before adaptation kicks in (and forever, when
    /// `adapt_cov` is off); `None` means `diffuse_scale²·I`.
    pub init_cov: Option<DMatrix<f64>>,
    /// Learn `Σ̂` from the chain history.
    pub adapt_cov: bool,
    /// Adapt the step size `c`.
    pub adapt_step: bool,
    /// Starting point.
    pub init: DVector<f64>,
    /// Prior over θ.
    pub prior: PriorSpec,
}

impl MhSettings {
    /// Defaults: 0.234 target acceptance, 0.95 weight on the adapted
    /// component, `k^{−0.6}` adaptation decay, classical `2.38²/dim`
    /// initial step size.
    pub fn new(init: DVector<f64>, prior: PriorSpec) -> MhSettings {
        let dim = init.len().max(1) as f64;
        MhSettings {
            n_draws: 10_000,
            burn_in: 1_000,
            target_accept: 0.234,
            adapt_weight: 0.95,
            diffuse_scale: 0.25,
            decay: 0.6,
            init_stepsize: 2.38 * 2.38 / dim,
            init_cov: None,
            adapt_cov: true,
            adapt_step: true,
            init,
            prior,
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.init.len() != dim {
            return invalid(format!(
                "initial point has {} coordinates, estimator works on {dim}",
                self.init.len()
            ));
        }
        if self.init.iter().any(|v| !v.is_finite()) {
            return invalid("initial point must be finite");
        }
        if self.n_draws <= self.burn_in {
            return invalid(format!(
                "n_draws {} must exceed burn_in {}",
                self.n_draws, self.burn_in
            ));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return invalid("target acceptance rate must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.adapt_weight) {
            return invalid("adapted-proposal weight must lie in [0, 1]");
        }
        if !(self.diffuse_scale.is_finite() && self.diffuse_scale > 0.0) {
            return invalid("diffuse proposal scale must be positive");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return invalid("adaptation decay exponent must lie in (0, 1]");
        }
        if !(self.init_stepsize.is_finite() && self.init_stepsize > 0.0) {
            return invalid("initial step size must be positive");
        }
        if let Some(cov) = &self.init_cov {
            if cov.nrows() != dim || cov.ncols() != dim {
                return invalid("initial proposal covariance must be dim×dim");
            }
        }
        Ok(())
    }
}

/// MCMC output: every state of the chain plus the adaptation trace.
#[derive(Debug, Clone)]
pub struct PosteriorChain {
    /// `n_draws × dim`; row `k` is the state after iteration `k + 1`.
    /// Rejected iterations repeat the previous row exactly.
    pub draws: DMatrix<f64>,
    /// Stored noisy log-posterior value per row (prior included).
    pub logpost: Vec<f64>,
    /// Whether each iteration's proposal was accepted.
    pub accepted: Vec<bool>,
    /// Step-size multiplier `c` after each iteration.
    pub stepsizes: Vec<f64>,
    /// Occasional `(iteration, Σ̂)` snapshots of the adapted covariance.
    pub cov_trace: Vec<(usize, DMatrix<f64>)>,
    /// Leading rows regarded as burn-in.
    pub burn_in: usize,
}

impl PosteriorChain {
    pub fn len(&self) -> usize {
        self.draws.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.draws.ncols()
    }

    /// Draws with burn-in dropped.
    pub fn kept(&self) -> DMatrix<f64> {
        self.draws
            .rows(self.burn_in, self.len() - self.burn_in)
            .into_owned()
    }

    /// Acceptance rate over the kept draws.
    pub fn acceptance_rate(&self) -> f64 {
        let kept = &self.accepted[self.burn_in..];
        kept.iter().filter(|&&a| a).count() as f64 / kept.len().max(1) as f64
    }
}

/// Run the pseudo-marginal adaptive RWMH sampler.
///
/// Per iteration the randomness is consumed in a fixed order — mixture
/// pick, proposal normals, then (only when the prior admits the
/// proposal) the estimator's noise seed and the acceptance uniform — so
/// runs are reproducible from `seed` alone. The initial point is scored
/// once before the loop; an out-of-prior or `−∞` start is an error.
pub fn adaptive_rwmh(
    estimator: &dyn LogPostEstimator,
    settings: &MhSettings,
    seed: u64,
) -> Result<PosteriorChain> {
    let dim = estimator.dim();
    if dim == 0 {
        return invalid("estimator dimension must be positive");
    }
    settings.validate(dim)?;

    let mut rng = rng::root(seed);
    let prior_init = settings.prior.log_density(&settings.init);
    if prior_init == f64::NEG_INFINITY {
        return invalid("initial point lies outside the prior support");
    }
    let init_seed = rng.gen::<u64>();
    let est_init = estimator.log_post(&settings.init, init_seed)?;
    if est_init.is_nan() {
        return numeric("estimator returned NaN at the initial point");
    }
    if est_init == f64::NEG_INFINITY {
        return numeric("estimator returned −∞ at the initial point");
    }

    let base_cov = settings.init_cov.clone().unwrap_or_else(|| {
        DMatrix::identity(dim, dim) * (settings.diffuse_scale * settings.diffuse_scale)
    });
    let mut chol_l = Cholesky::new(symmetrize(&base_cov))
        .ok_or_else(|| crate::Error::Computation("initial proposal covariance is not PD".into()))?
        .l();

    // Running mean/scatter over all chain states (Welford), seeded with
    // the initial point; the adapted covariance switches from `base_cov`
    // to the running estimate once enough states have accumulated.
    let warmup = 2 * dim + 10;
    let mut count = 1.0f64;
    let mut mean = settings.init.clone();
    let mut scatter = DMatrix::<f64>::zeros(dim, dim);

    let mut cur = settings.init.clone();
    let mut stored = est_init + prior_init;
    let mut logc = settings.init_stepsize.ln();

    let n = settings.n_draws;
    let mut draws = DMatrix::zeros(n, dim);
    let mut logpost = Vec::with_capacity(n);
    let mut accepted = Vec::with_capacity(n);
    let mut stepsizes = Vec::with_capacity(n);
    let mut cov_trace = Vec::new();
    let snapshot_every = (n / 8).max(1);

    for k in 1..=n {
        let u_mix = rng.gen::<f64>();
        let eps =
            DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let proposal = if u_mix < settings.adapt_weight {
            &cur + (&chol_l * &eps) * logc.exp().sqrt()
        } else {
            &cur + &eps * settings.diffuse_scale
        };

        let prior_prop = settings.prior.log_density(&proposal);
        let mut alpha = 0.0;
        let mut accept = false;
        if prior_prop > f64::NEG_INFINITY {
            let noise_seed = rng.gen::<u64>();
            let est = estimator.log_post(&proposal, noise_seed)?;
            if est.is_nan() {
                return numeric(format!("estimator returned NaN at iteration {k}"));
            }
            let total = est + prior_prop;
            let u_acc = rng.gen::<f64>();
            // Stored-value reuse: `stored` is the accepted estimate from
            // an earlier iteration, never recomputed.
            let log_ratio = total - stored;
            alpha = log_ratio.min(0.0).exp();
            if u_acc < alpha {
                cur = proposal;
                stored = total;
                accept = true;
            }
        }

        draws.row_mut(k - 1).copy_from(&cur.transpose());
        logpost.push(stored);
        accepted.push(accept);

        if settings.adapt_step {
            logc += (k as f64).powf(-settings.decay) * (alpha - settings.target_accept);
            logc = logc.clamp(-27.0, 27.0);
        }
        stepsizes.push(logc.exp());

        if settings.adapt_cov {
            count += 1.0;
            let delta = &cur - &mean;
            mean += &delta / count;
            let delta2 = &cur - &mean;
            scatter += &delta * delta2.transpose();
            if count as usize > warmup {
                let mut cov = symmetrize(&(&scatter / (count - 1.0)));
                let ridge = 1e-8 * (cov.trace() / dim as f64).max(1e-8);
                for i in 0..dim {
                    cov[(i, i)] += ridge;
                }
                chol_l = Cholesky::new(cov.clone())
                    .ok_or_else(|| {
                        crate::Error::Computation(format!(
                            "adapted covariance lost positive definiteness at iteration {k}"
                        ))
                    })?
                    .l();
                if k % snapshot_every == 0 || k == n {
                    cov_trace.push((k, cov));
                }
            }
        }
    }

    Ok(PosteriorChain {
        draws,
        logpost,
        accepted,
        stepsizes,
        cov_trace,
        burn_in: settings.burn_in,
    })
}

/// Standard convergence summaries of a chain's kept draws.
#[derive(Debug, Clone)]
pub struct ChainDiagnostics {
    pub acceptance_rate: f64,
    /// Effective sample size per coordinate (Geyer initial monotone
    /// sequence estimator).
    pub ess: Vec<f64>,
    /// Split-R̂ per coordinate (chain halves as pseudo-chains).
    pub split_rhat: Vec<f64>,
}

/// Acceptance rate, per-coordinate ESS, and split-R̂ over the kept part
/// of the chain (burn-in dropped). Needs at least 100 kept draws.
pub fn diagnostics(chain: &PosteriorChain) -> Result<ChainDiagnostics> {
    let kept = chain.kept();
    if kept.nrows() < 100 {
        return invalid(format!(
            "diagnostics need at least 100 kept draws, got {}",
            kept.nrows()
        ));
    }
    let ess = (0..kept.ncols())
        .map(|j| ess_geyer(kept.column(j).as_slice()))
        .collect();
    let split_rhat = (0..kept.ncols())
        .map(|j| split_rhat(kept.column(j).as_slice()))
        .collect();
    Ok(ChainDiagnostics {
        acceptance_rate: chain.acceptance_rate(),
        ess,
        split_rhat,
    })
}

/// Geyer initial monotone sequence ESS: sum autocovariances in pairs
/// `Γ_m = γ_{2m} + γ_{2m+1}` while positive, clip the running pair sums
/// to be non-increasing, and stop at the first non-positive pair.
fn ess_geyer(x: &[f64]) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let gamma = |lag: usize| -> f64 {
        (0..n - lag)
            .map(|i| (x[i] - mean) * (x[i + lag] - mean))
            .sum::<f64>()
            / n as f64
    };
    let scale = x.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
    let g0 = gamma(0);
    if g0 <= 1e-28 * scale * scale {
        return 1.0; // (numerically) constant chain: one effective draw
    }
    let mut pair_sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut m = 0usize;
    while 2 * m + 1 < n {
        let pair = gamma(2 * m) + gamma(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        let clipped = pair.min(prev_pair);
        pair_sum += clipped;
        prev_pair = clipped;
        m += 1;
    }
    let iat = (-1.0 + 2.0 * pair_sum / g0).max(1.0 / n as f64);
    (n as f64 / iat).clamp(1.0, n as f64)
}

/// Split-R̂ with the two halves of one chain as pseudo-chains.
fn split_rhat(x: &[f64]) -> f64 {
    let half = x.len() / 2;
    let a = &x[..half];
    let b = &x[x.len() - half..];
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let var =
        |s: &[f64], m: f64| s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (s.len() - 1) as f64;
    let (ma, mb) = (mean(a), mean(b));
    let w = 0.5 * (var(a, ma) + var(b, mb));
    let grand = 0.5 * (ma + mb);
    let between = half as f64 * ((ma - grand).powi(2) + (mb - grand).powi(2));
    let scale = x.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
    let tiny = 1e-28 * scale * scale;
    if w <= tiny {
        return if between <= tiny { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (half as f64 - 1.0) / half as f64 * w + between / half as f64;
    (var_plus / w).sqrt()
}

/// Coarse grid scan over a finite box: evaluate the estimator at the
/// midpoints of `points_per_dim^dim` cells (one fresh noise substream
/// each) and return the best point — the "rough grid search" used to
/// initialize chains.
pub fn grid_search_init(
    estimator: &dyn LogPostEstimator,
    lower: &[f64],
    upper: &[f64],
    points_per_dim: usize,
    seed: u64,
) -> Result<DVector<f64>> {
    let dim = estimator.dim();
    if lower.len() != dim || upper.len() != dim {
        return invalid("grid bounds must match the estimator dimension");
    }
    if lower
        .iter()
        .zip(upper)
        .any(|(l, u)| !(l.is_finite() && u.is_finite() && l < u))
    {
        return invalid("grid search needs a finite box with lower < upper");
    }
    if points_per_dim == 0 {
        return invalid("grid search needs at least one point per dimension");
    }
    let total = points_per_dim
        .checked_pow(dim as u32)
        .filter(|&t| t <= 200_000);
    let total = match total {
        Some(t) => t,
        None => return invalid("grid too large; reduce points_per_dim or the dimension"),
    };

    let mut best: Option<(f64, DVector<f64>)> = None;
    for flat in 0..total {
        let mut idx = flat;
        let theta = DVector::from_iterator(
            dim,
            (0..dim).map(|d| {
                let i = idx % points_per_dim;
                idx /= points_per_dim;
                lower[d] + (i as f64 + 0.5) / points_per_dim as f64 * (upper[d] - lower[d])
            }),
        );
        let mut sub = rng::substream(seed, flat as u64);
        let value = estimator.log_post(&theta, sub.gen::<u64>())?;
        if value.is_finite() && best.as_ref().map_or(true, |(b, _)| value > *b) {
            best = Some((value, theta));
        }
    }
    match best {
        Some((_, theta)) => Ok(theta),
        None => numeric("grid search found no point with a finite log posterior"),
    }
}
