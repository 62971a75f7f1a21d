//! Linear-Gaussian state space: filtering, smoothing, simulation smoothing,
//! simulation, and impulse responses.
//!
//! The model is
//!
//! `z_t − z̄ = A (z_{t−1} − z̄) + B ε_t`, `ε_t ~ N(0, I)`,
//! `x_t = S z_t + e_t`, `e_t ~ N(0, diag(σ_e²))`,
//!
//! initialized at the stationary distribution `z_1 ~ N(z̄, Σ∞)` with
//! `Σ∞ = A Σ∞ A' + B B'`. Measurement noise entries may be exactly zero
//! (noise-free rows); the filter only requires the one-step-ahead forecast
//! covariance of the observables to stay nonsingular.
//!
//! Covariance recursions do not depend on the data, so repeated passes over
//! simulated observations (the simulation smoother's inner loop) reuse one
//! set of gains and run means only.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{invalid, numeric, Error, Result};
use crate::rng;

/// Relative eigenvalue cutoff below which a forecast covariance is treated
/// as singular, and below which pseudo-inverse eigenvalues are dropped.
const SINGULARITY_TOL: f64 = 1e-12;

/// Validated linear-Gaussian state-space model.
#[derive(Debug, Clone)]
pub struct StateSpaceModel {
    zbar: DVector<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    s: DMatrix<f64>,
    sigma_e: DVector<f64>,
    /// Cached stationary state covariance `Σ∞`.
    stationary: DMatrix<f64>,
}

impl StateSpaceModel {
    /// Build and validate a model. `A` must be strictly stable and the
    /// dimensions of `zbar` (n_z), `A` (n_z×n_z), `B` (n_z×n_ε),
    /// `S` (n_x×n_z), and `sigma_e` (n_x, entrywise ≥ 0) must line up.
    pub fn new(
        zbar: DVector<f64>,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        s: DMatrix<f64>,
        sigma_e: DVector<f64>,
    ) -> Result<StateSpaceModel> {
        let n = zbar.len();
        if n == 0 {
            return invalid("state dimension must be positive");
        }
        if a.nrows() != n || a.ncols() != n {
            return invalid(format!(
                "transition matrix is {}x{}, expected {n}x{n}",
                a.nrows(),
                a.ncols()
            ));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return invalid(format!(
                "shock loading is {}x{}, expected {n} rows and at least one shock",
                b.nrows(),
                b.ncols()
            ));
        }
        if s.ncols() != n || s.nrows() == 0 {
            return invalid(format!(
                "observation matrix is {}x{}, expected positive rows and {n} columns",
                s.nrows(),
                s.ncols()
            ));
        }
        if sigma_e.len() != s.nrows() {
            return invalid(format!(
                "sigma_e has {} entries, expected {}",
                sigma_e.len(),
                s.nrows()
            ));
        }
        if sigma_e.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return invalid("sigma_e entries must be finite and nonnegative");
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        if !finite(&a) || !finite(&b) || !finite(&s) || !zbar.iter().all(|v| v.is_finite()) {
            return invalid("model matrices must be finite");
        }
        let stationary = stationary_covariance(&a, &b)?;
        Ok(StateSpaceModel {
            zbar,
            a,
            b,
            s,
            sigma_e,
            stationary,
        })
    }

    pub fn n_state(&self) -> usize {
        self.zbar.len()
    }

    pub fn n_obs(&self) -> usize {
        self.s.nrows()
    }

    pub fn n_shock(&self) -> usize {
        self.b.ncols()
    }

    pub fn zbar(&self) -> &DVector<f64> {
        &self.zbar
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn sigma_e(&self) -> &DVector<f64> {
        &self.sigma_e
    }

    /// Stationary state covariance `Σ∞`.
    pub fn stationary(&self) -> &DMatrix<f64> {
        &self.stationary
    }

    /// Measurement noise covariance `diag(σ_e²)`.
    pub fn meas_noise_cov(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.sigma_e.map(|v| v * v))
    }

    /// Observable mean `S z̄`.
    pub fn obs_mean(&self) -> DVector<f64> {
        &self.s * &self.zbar
    }
}

/// Solve the discrete Lyapunov equation `Σ = A Σ A' + B B'` by the doubling
/// iteration `Σ ← Σ + A_k Σ A_k'`, `A_k ← A_k²`, which converges
/// quadratically for strictly stable `A`.
///
/// Stability is certified by the iteration itself — the partial sums
/// converge exactly when the powers of `A` die out — rather than by a
/// dense eigensolver, whose QR iteration can stall on the repeated roots
/// that block-diagonal transition laws produce.
pub fn stationary_covariance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return invalid("transition matrix must be square and non-empty");
    }
    if b.nrows() != a.nrows() {
        return invalid("shock loading must have as many rows as the state");
    }
    let mut sigma = b * b.transpose();
    let mut ak = a.clone();
    // After k doublings the increment involves A^(2^k); 120 doublings put
    // any strictly stable matrix far past its transient, so failing to
    // converge by then means a root at or outside the unit circle (up to
    // f64 resolution).
    for _ in 0..120 {
        let term = &ak * &sigma * ak.transpose();
        let increment = term.norm();
        if !increment.is_finite() || sigma.norm() > 1e140 {
            return invalid(
                "transition matrix is not strictly stable (stationary covariance diverged)",
            );
        }
        sigma += term;
        if increment <= 1e-16 * (1.0 + sigma.norm()) {
            return Ok(symmetrize(&sigma));
        }
        ak = &ak * &ak;
    }
    invalid("transition matrix is not strictly stable (stationary covariance did not converge)")
}

/// Kalman filter output: log-likelihood plus one-step-ahead and filtered
/// moments for every period (index `t` runs over the data).
#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub loglik: f64,
    pub pred_mean: Vec<DVector<f64>>,
    pub pred_cov: Vec<DMatrix<f64>>,
    pub filt_mean: Vec<DVector<f64>>,
    pub filt_cov: Vec<DMatrix<f64>>,
}

/// Smoothed moments `E[z_t | x_{1:T}]`, `Var[z_t | x_{1:T}]`.
#[derive(Debug, Clone)]
pub struct SmootherOutput {
    pub mean: Vec<DVector<f64>>,
    pub cov: Vec<DMatrix<f64>>,
}

/// Data-independent filter matrices, reusable across observation sequences
/// of the same length.
struct PassKit {
    pred_cov: Vec<DMatrix<f64>>,
    filt_cov: Vec<DMatrix<f64>>,
    /// Kalman gains `K_t = P_{t|t−1} S' F_t⁻¹`.
    gains: Vec<DMatrix<f64>>,
    /// Innovation covariance factors for the likelihood.
    innov_chol: Vec<Cholesky<f64, Dyn>>,
}

fn build_pass_kit(model: &StateSpaceModel, horizon: usize) -> Result<PassKit> {
    let n_obs = model.n_obs();
    let r = model.meas_noise_cov();
    let identity = DMatrix::<f64>::identity(model.n_state(), model.n_state());
    let mut kit = PassKit {
        pred_cov: Vec::with_capacity(horizon),
        filt_cov: Vec::with_capacity(horizon),
        gains: Vec::with_capacity(horizon),
        innov_chol: Vec::with_capacity(horizon),
    };
    let mut prev_filt: Option<DMatrix<f64>> = None;
    for t in 0..horizon {
        let pred = match &prev_filt {
            None => model.stationary.clone(),
            Some(p) => {
                symmetrize(&(&model.a * p * model.a.transpose() + &model.b * model.b.transpose()))
            }
        };
        let innov_cov = symmetrize(&(&model.s * &pred * model.s.transpose() + &r));
        let max_diag = innov_cov.diagonal().iter().fold(0.0f64, |m, &v| m.max(v));
        let chol = Cholesky::new(innov_cov).ok_or_else(|| {
            Error::Computation(format!(
                "singular one-step-ahead forecast covariance at t={}",
                t + 1
            ))
        })?;
        let min_l = chol
            .l_dirty()
            .diagonal()
            .iter()
            .fold(f64::MAX, |m, &v| m.min(v));
        if min_l * min_l <= SINGULARITY_TOL * max_diag.max(1.0) {
            return numeric(format!(
                "one-step-ahead forecast covariance at t={} is singular to working precision",
                t + 1
            ));
        }
        // K_t = P S' F⁻¹, via F K' = S P.
        let gain = chol.solve(&(&model.s * &pred)).transpose();
        // Joseph form keeps the update PSD even with zero measurement noise.
        let ik = &identity - &gain * &model.s;
        let filt = symmetrize(&(&ik * &pred * ik.transpose() + &gain * &r * gain.transpose()));
        kit.pred_cov.push(pred);
        kit.filt_cov.push(filt.clone());
        kit.gains.push(gain);
        kit.innov_chol.push(chol);
        prev_filt = Some(filt);
        let _ = n_obs;
    }
    Ok(kit)
}

/// Mean recursions against a fixed kit; returns predicted means, filtered
/// means, and the Gaussian log-likelihood of `x`.
fn filter_pass(
    model: &StateSpaceModel,
    kit: &PassKit,
    x: &[DVector<f64>],
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>, f64) {
    let horizon = x.len();
    let mut pred_mean = Vec::with_capacity(horizon);
    let mut filt_mean = Vec::with_capacity(horizon);
    let ln_two_pi = (2.0 * std::f64::consts::PI).ln();
    let mut loglik = 0.0;
    for (t, xt) in x.iter().enumerate() {
        let pred = match filt_mean.last() {
            None => model.zbar.clone(),
            Some(prev) => &model.zbar + &model.a * (prev - &model.zbar),
        };
        let innovation = xt - &model.s * &pred;
        let chol = &kit.innov_chol[t];
        let solved = chol.solve(&innovation);
        let logdet = 2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|v| v.ln())
                .sum::<f64>();
        loglik += -0.5 * (innovation.len() as f64 * ln_two_pi + logdet + innovation.dot(&solved));
        let filt = &pred + &kit.gains[t] * &innovation;
        pred_mean.push(pred);
        filt_mean.push(filt);
    }
    (pred_mean, filt_mean, loglik)
}

/// Kalman filter under stationary initialization.
///
/// Returns an error if any observation has the wrong dimension or the
/// one-step-ahead forecast covariance turns singular (which happens when
/// every `σ_e` entry is zero and the state filtering degenerates).
pub fn kalman_filter(model: &StateSpaceModel, x: &[DVector<f64>]) -> Result<FilterOutput> {
    if x.is_empty() {
        return invalid("kalman_filter needs at least one observation");
    }
    if let Some(bad) = x.iter().position(|row| row.len() != model.n_obs()) {
        return invalid(format!(
            "observation at t={} has {} entries, expected {}",
            bad + 1,
            x[bad].len(),
            model.n_obs()
        ));
    }
    let kit = build_pass_kit(model, x.len())?;
    let (pred_mean, filt_mean, loglik) = filter_pass(model, &kit, x);
    if !loglik.is_finite() {
        return numeric("non-finite filter log-likelihood");
    }
    Ok(FilterOutput {
        loglik,
        pred_mean,
        pred_cov: kit.pred_cov,
        filt_mean,
        filt_cov: kit.filt_cov,
    })
}

/// Smoother gain `J_t = P_{t|t} A' P_{t+1|t}⁻¹`, via Cholesky with an
/// eigenvalue-clipped pseudo-inverse fallback for singular forecast
/// covariances (exactly observed state directions).
fn smoother_gain(
    filt_cov: &DMatrix<f64>,
    a: &DMatrix<f64>,
    pred_cov_next: &DMatrix<f64>,
) -> DMatrix<f64> {
    let cross = a * filt_cov; // (A P_filt)' = P_filt A'
    match Cholesky::new(pred_cov_next.clone()) {
        Some(chol) => chol.solve(&cross).transpose(),
        None => {
            let eig = pred_cov_next.clone().symmetric_eigen();
            let max_ev = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v));
            let cut = SINGULARITY_TOL * max_ev.max(1e-300);
            let inv_vals = DVector::from_iterator(
                eig.eigenvalues.len(),
                eig.eigenvalues
                    .iter()
                    .map(|&v| if v > cut { 1.0 / v } else { 0.0 }),
            );
            let pinv = &eig.eigenvectors
                * DMatrix::from_diagonal(&inv_vals)
                * eig.eigenvectors.transpose();
            (pinv * cross).transpose()
        }
    }
}

/// Rauch–Tung–Striebel smoother on the output of [`kalman_filter`].
pub fn kalman_smoother(model: &StateSpaceModel, filter: &FilterOutput) -> Result<SmootherOutput> {
    let horizon = filter.filt_mean.len();
    if horizon == 0 {
        return invalid("smoother needs a non-empty filter output");
    }
    let mut mean = filter.filt_mean.clone();
    let mut cov = filter.filt_cov.clone();
    for t in (0..horizon - 1).rev() {
        let j = smoother_gain(&filter.filt_cov[t], &model.a, &filter.pred_cov[t + 1]);
        mean[t] = &filter.filt_mean[t] + &j * (&mean[t + 1] - &filter.pred_mean[t + 1]);
        cov[t] = symmetrize(
            &(&filter.filt_cov[t] + &j * (&cov[t + 1] - &filter.pred_cov[t + 1]) * j.transpose()),
        );
    }
    Ok(SmootherOutput { mean, cov })
}

/// Backward mean-only smoothing pass with precomputed gains.
fn smooth_means(
    gains: &[DMatrix<f64>],
    pred_mean: &[DVector<f64>],
    filt_mean: &[DVector<f64>],
) -> Vec<DVector<f64>> {
    let horizon = filt_mean.len();
    let mut mean = filt_mean.to_vec();
    for t in (0..horizon - 1).rev() {
        mean[t] = &filt_mean[t] + &gains[t] * (&mean[t + 1] - &pred_mean[t + 1]);
    }
    mean
}

/// A simulated state/observation path.
#[derive(Debug, Clone)]
pub struct SimulatedPath {
    pub states: Vec<DVector<f64>>,
    pub obs: Vec<DVector<f64>>,
}

/// Draw a zero-mean Gaussian vector with PSD covariance `cov`, using the
/// Cholesky factor when it exists and the clipped symmetric eigenvalue
/// decomposition otherwise.
pub fn sample_zero_mean_gaussian(cov: &DMatrix<f64>, rng: &mut rng::Rng) -> DVector<f64> {
    let n = cov.nrows();
    let iid = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    match Cholesky::new(cov.clone()) {
        Some(chol) => chol.l() * iid,
        None => {
            let eig = cov.clone().symmetric_eigen();
            let max_ev = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v));
            let cut = SINGULARITY_TOL * max_ev.max(1e-300);
            let scale = DVector::from_iterator(
                n,
                eig.eigenvalues
                    .iter()
                    .map(|&v| if v > cut { v.sqrt() } else { 0.0 }),
            );
            &eig.eigenvectors * DMatrix::from_diagonal(&scale) * iid
        }
    }
}

fn simulate_with(model: &StateSpaceModel, horizon: usize, rng: &mut rng::Rng) -> SimulatedPath {
    let mut states = Vec::with_capacity(horizon);
    let mut obs = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let state = if t == 0 {
            &model.zbar + sample_zero_mean_gaussian(&model.stationary, rng)
        } else {
            let shocks = DVector::from_iterator(
                model.n_shock(),
                (0..model.n_shock()).map(|_| rng.sample::<f64, _>(StandardNormal)),
            );
            &model.zbar + &model.a * (states.last().unwrap() - &model.zbar) + &model.b * shocks
        };
        let noise = DVector::from_iterator(
            model.n_obs(),
            model
                .sigma_e
                .iter()
                .map(|&sd| sd * rng.sample::<f64, _>(StandardNormal)),
        );
        obs.push(&model.s * &state + noise);
        states.push(state);
    }
    SimulatedPath { states, obs }
}

/// Simulate `horizon` periods from the stationary distribution.
/// Deterministic in `seed`.
pub fn simulate(model: &StateSpaceModel, horizon: usize, seed: u64) -> Result<SimulatedPath> {
    if horizon == 0 {
        return invalid("simulation horizon must be positive");
    }
    Ok(simulate_with(model, horizon, &mut rng::root(seed)))
}

/// Draw `n_draws` state paths from the joint smoothing density `p(z | x)`.
///
/// Uses the mean-correction simulation smoother: with `ẑ(·)` the smoothed
/// mean as a function of the data, draw an unconditional path `(z⁺, x⁺)`
/// and return `ẑ(x) + z⁺ − ẑ(x⁺)`. The smoothing error `z⁺ − ẑ(x⁺)` has
/// exactly the conditional covariance of `z | x` and is independent of the
/// data, so each path is an exact draw. Draw `j` consumes RNG substream
/// `j + 1` of `seed`, making results independent of thread count.
pub fn simulation_smoother_draws(
    model: &StateSpaceModel,
    x: &[DVector<f64>],
    n_draws: usize,
    seed: u64,
) -> Result<Vec<Vec<DVector<f64>>>> {
    if n_draws == 0 {
        return invalid("simulation smoother needs at least one draw");
    }
    if x.is_empty() {
        return invalid("simulation smoother needs at least one observation");
    }
    if let Some(bad) = x.iter().position(|row| row.len() != model.n_obs()) {
        return invalid(format!(
            "observation at t={} has {} entries, expected {}",
            bad + 1,
            x[bad].len(),
            model.n_obs()
        ));
    }
    let horizon = x.len();
    let kit = build_pass_kit(model, horizon)?;
    let smoother_gains: Vec<DMatrix<f64>> = (0..horizon - 1)
        .map(|t| smoother_gain(&kit.filt_cov[t], &model.a, &kit.pred_cov[t + 1]))
        .collect();
    let (pred_mean, filt_mean, _) = filter_pass(model, &kit, x);
    let smoothed_data = smooth_means(&smoother_gains, &pred_mean, &filt_mean);

    let one_draw = |j: usize| -> Vec<DVector<f64>> {
        let mut draw_rng = rng::substream(seed, j as u64 + 1);
        let plus = simulate_with(model, horizon, &mut draw_rng);
        let (pred_plus, filt_plus, _) = filter_pass(model, &kit, &plus.obs);
        let smoothed_plus = smooth_means(&smoother_gains, &pred_plus, &filt_plus);
        (0..horizon)
            .map(|t| &smoothed_data[t] + &plus.states[t] - &smoothed_plus[t])
            .collect()
    };
    // Draws own their substreams and the collect preserves index order, so
    // the result is identical for any thread count.
    Ok((0..n_draws).into_par_iter().map(one_draw).collect())
}

/// Impulse response to a one-standard-deviation impulse in shock
/// `shock_index`: state responses `A^h B e_k` and observable responses
/// `S A^h B e_k` for horizons `h = 0..=horizon`.
#[derive(Debug, Clone)]
pub struct ImpulseResponse {
    pub states: Vec<DVector<f64>>,
    pub obs: Vec<DVector<f64>>,
}

pub fn impulse_response(
    model: &StateSpaceModel,
    shock_index: usize,
    horizon: usize,
) -> Result<ImpulseResponse> {
    if shock_index >= model.n_shock() {
        return invalid(format!(
            "shock index {shock_index} out of range (model has {} shocks)",
            model.n_shock()
        ));
    }
    let mut state = model.b.column(shock_index).into_owned();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut obs = Vec::with_capacity(horizon + 1);
    for _ in 0..=horizon {
        obs.push(&model.s * &state);
        states.push(state.clone());
        state = &model.a * &state;
    }
    Ok(ImpulseResponse { states, obs })
}

/// `(M + M') / 2` — keeps covariance recursions symmetric against
/// floating-point drift.
pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}
