//! Joint likelihood of a macro series and repeated micro cross sections.
//!
//! The joint density factorizes as `p(x, y | θ) = p(x | θ) · E[p(y | z, θ) | x]`,
//! where the expectation runs over the smoothing distribution of the
//! state path. The macro factor is the Kalman filter likelihood; the
//! micro factor is estimated without bias by averaging the conditional
//! micro likelihood *levels* over simulation-smoother draws:
//!
//! ```text
//! p̂(y | x, θ) = J⁻¹ Σ_j p(y | z⁽ʲ⁾, θ),   z⁽ʲ⁾ ~ p(z | x, θ).
//! ```
//!
//! Unbiasedness holds for every `J ≥ 1`, which is what a pseudo-marginal
//! sampler needs to target the exact posterior. All level averages are
//! computed in log space with max subtraction.
//!
//! For micro observations that are themselves Gaussian in a linear index
//! of the state, the expectation is available exactly: the per-period
//! cross-section mean is a conjugate extra observable, and the filter on
//! the augmented observation vector plus a data-only residual term gives
//! the exact joint log likelihood. That closed form is the oracle the
//! simulation route is validated against.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{invalid, numeric, Result};
use crate::microdens::{MicroBlock, MicroDataset, MicroRecord};
use crate::rng;
use crate::statespace::{kalman_filter, simulation_smoother_draws, StateSpaceModel};

/// `log(mean(exp(v)))`, stabilized by max subtraction. Empty input and
/// all-`−∞` input give `−∞` (a zero likelihood, not an error).
pub fn logmeanexp(values: &[f64]) -> f64 {
    let max = values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if values.is_empty() || max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + (sum / values.len() as f64).ln()
}

/// Cross-sectional density of one period's records at a fixed state path.
pub trait PeriodDensity {
    /// Log density of one record; `−∞` encodes an impossible observation.
    fn log_density(&self, record: &MicroRecord) -> f64;
}

/// Family of cross-sectional densities indexed by time and the state
/// path. `at_time` receives the whole path (period `t` reads
/// `states[t − 1]`, panel densities may reach back further) and the data
/// block, so implementations can size caches from the observed support.
pub trait MicroFamily: Send + Sync {
    fn at_time<'a>(
        &'a self,
        t: usize,
        states: &[DVector<f64>],
        block: &MicroBlock,
    ) -> Result<Box<dyn PeriodDensity + Send + Sync + 'a>>;

    /// Simulate a cross section of `n` records for period `t`.
    fn simulate(
        &self,
        t: usize,
        states: &[DVector<f64>],
        n: usize,
        rng: &mut rng::Rng,
    ) -> Result<Vec<MicroRecord>>;
}

/// `log p(y | z, θ)`: the micro log likelihood at one state path, summed
/// over periods and records. `−∞` means some record is impossible at this
/// path.
pub fn micro_loglik_given_states(
    family: &dyn MicroFamily,
    states: &[DVector<f64>],
    data: &MicroDataset,
) -> Result<f64> {
    if data.max_time() > states.len() {
        return invalid(format!(
            "micro data extend to t={} but the state path has {} periods",
            data.max_time(),
            states.len()
        ));
    }
    let mut total = 0.0;
    for block in data.blocks() {
        let density = family.at_time(block.t, states, block)?;
        for rec in &block.records {
            let ll = density.log_density(rec);
            if ll.is_nan() {
                return numeric(format!(
                    "micro density returned NaN for unit {} at t={}",
                    rec.id, block.t
                ));
            }
            total += ll;
        }
    }
    Ok(total)
}

/// Unbiased estimate of the joint log likelihood.
#[derive(Debug, Clone)]
pub struct LogLikEstimate {
    /// Exact macro factor `log p(x | θ)` from the Kalman filter.
    pub macro_loglik: f64,
    /// `log p̂(y | x, θ)`: log of the average conditional likelihood level.
    pub micro_loglik: f64,
    /// Per-draw conditional micro log likelihoods `log p(y | z⁽ʲ⁾, θ)`.
    pub per_draw: Vec<f64>,
    /// Smoother seed that produced the draws.
    pub seed: u64,
}

impl LogLikEstimate {
    pub fn total(&self) -> f64 {
        self.macro_loglik + self.micro_loglik
    }

    pub fn n_draws(&self) -> usize {
        self.per_draw.len()
    }
}

/// Full-information joint log likelihood estimate: exact macro factor
/// plus the `J`-draw unbiased level average of the micro factor. The
/// estimate is deterministic in `seed` and independent of thread count
/// (draw `j` owns RNG substream `j + 1`; the reduction preserves draw
/// order).
pub fn full_info_loglik(
    model: &StateSpaceModel,
    family: &dyn MicroFamily,
    x: &[DVector<f64>],
    data: &MicroDataset,
    n_draws: usize,
    seed: u64,
) -> Result<LogLikEstimate> {
    if data.max_time() > x.len() {
        return invalid(format!(
            "micro data extend to t={} but the macro series has {} periods",
            data.max_time(),
            x.len()
        ));
    }
    let filt = kalman_filter(model, x)?;
    let draws = simulation_smoother_draws(model, x, n_draws, seed)?;
    let per_draw = draws
        .par_iter()
        .map(|states| micro_loglik_given_states(family, states, data))
        .collect::<Result<Vec<f64>>>()?;
    let micro_loglik = logmeanexp(&per_draw);
    Ok(LogLikEstimate {
        macro_loglik: filt.loglik,
        micro_loglik,
        per_draw,
        seed,
    })
}

/// Micro records that are Gaussian in a linear index of the state:
/// `y_{i,t} ~ N(load'z_t, σ_u²)`, independent across units. Scores the
/// first entry of each record's observation vector.
#[derive(Debug, Clone)]
pub struct GaussianMicroFamily {
    load: DVector<f64>,
    sigma_u: f64,
}

impl GaussianMicroFamily {
    pub fn new(load: DVector<f64>, sigma_u: f64) -> Result<GaussianMicroFamily> {
        if load.is_empty() || load.iter().any(|v| !v.is_finite()) {
            return invalid("state loading must be non-empty and finite");
        }
        if !(sigma_u.is_finite() && sigma_u > 0.0) {
            return invalid(format!("micro noise scale must be positive, got {sigma_u}"));
        }
        Ok(GaussianMicroFamily { load, sigma_u })
    }

    pub fn sigma_u(&self) -> f64 {
        self.sigma_u
    }

    pub fn load(&self) -> &DVector<f64> {
        &self.load
    }

    fn mean_at(&self, t: usize, states: &[DVector<f64>]) -> Result<f64> {
        if t == 0 || t > states.len() {
            return invalid(format!("period {t} outside the state path"));
        }
        let z = &states[t - 1];
        if z.len() != self.load.len() {
            return invalid("state dimension does not match the micro loading");
        }
        Ok(self.load.dot(z))
    }
}

struct GaussianPeriod {
    mean: f64,
    sigma: f64,
}

impl PeriodDensity for GaussianPeriod {
    fn log_density(&self, record: &MicroRecord) -> f64 {
        crate::stats::norm_logpdf((record.y[0] - self.mean) / self.sigma) - self.sigma.ln()
    }
}

impl MicroFamily for GaussianMicroFamily {
    fn at_time<'a>(
        &'a self,
        t: usize,
        states: &[DVector<f64>],
        _block: &MicroBlock,
    ) -> Result<Box<dyn PeriodDensity + Send + Sync + 'a>> {
        Ok(Box::new(GaussianPeriod {
            mean: self.mean_at(t, states)?,
            sigma: self.sigma_u,
        }))
    }

    fn simulate(
        &self,
        t: usize,
        states: &[DVector<f64>],
        n: usize,
        rng: &mut rng::Rng,
    ) -> Result<Vec<MicroRecord>> {
        let mean = self.mean_at(t, states)?;
        Ok((0..n as u64)
            .map(|id| {
                let y = mean + self.sigma_u * rng.sample::<f64, _>(StandardNormal);
                MicroRecord::new(id, vec![y])
            })
            .collect())
    }
}

/// Exact joint log likelihood when the micro family is
/// [`GaussianMicroFamily`]. The cross-section mean `ȳ_t` is a conjugate
/// extra observable with noise `σ_u²/N_t`, so a filter pass on the
/// augmented observation vector integrates the states out exactly; the
/// within-period residuals contribute the state-independent factor
/// `(2πσ_u²)^{−(N_t−1)/2} N_t^{−1/2} exp(−S_t/(2σ_u²))` with
/// `S_t = Σ_i (y_{i,t} − ȳ_t)²`.
pub fn gaussian_micro_joint_loglik(
    model: &StateSpaceModel,
    x: &[DVector<f64>],
    data: &MicroDataset,
    load: &DVector<f64>,
    sigma_u: f64,
) -> Result<f64> {
    if load.len() != model.n_state() {
        return invalid("micro loading must match the state dimension");
    }
    if !(sigma_u.is_finite() && sigma_u > 0.0) {
        return invalid(format!("micro noise scale must be positive, got {sigma_u}"));
    }
    if data.max_time() > x.len() {
        return invalid(format!(
            "micro data extend to t={} but the macro series has {} periods",
            data.max_time(),
            x.len()
        ));
    }
    let n_obs = model.n_obs();
    let n_state = model.n_state();
    let two_pi_ln = (2.0 * std::f64::consts::PI).ln();

    // Per-period micro summaries: (N_t, ȳ_t, S_t).
    let mut summary = vec![None; x.len() + 1];
    let mut residual = 0.0;
    for block in data.blocks() {
        let n = block.records.len() as f64;
        let mean = block.records.iter().map(|r| r.y[0]).sum::<f64>() / n;
        let s = block
            .records
            .iter()
            .map(|r| (r.y[0] - mean).powi(2))
            .sum::<f64>();
        residual += -0.5 * (n - 1.0) * (two_pi_ln + (sigma_u * sigma_u).ln())
            - 0.5 * n.ln()
            - s / (2.0 * sigma_u * sigma_u);
        summary[block.t] = Some((n, mean));
    }

    // Filter with time-varying observation rows: the macro rows always,
    // plus the cross-section mean when a block is present.
    let mut pred_mean = model.zbar().clone();
    let mut pred_cov = model.stationary().clone();
    let mut loglik = residual;
    for (idx, xt) in x.iter().enumerate() {
        if xt.len() != n_obs {
            return invalid(format!(
                "observation at t={} has {} entries, expected {n_obs}",
                idx + 1,
                xt.len()
            ));
        }
        let t = idx + 1;
        let (s_t, r_diag, obs) = match summary[t] {
            Some((n, mean)) => {
                let mut s_aug = DMatrix::zeros(n_obs + 1, n_state);
                s_aug
                    .view_mut((0, 0), (n_obs, n_state))
                    .copy_from(model.s());
                s_aug.row_mut(n_obs).copy_from(&load.transpose());
                let mut r = DVector::zeros(n_obs + 1);
                for (k, sd) in model.sigma_e().iter().enumerate() {
                    r[k] = sd * sd;
                }
                r[n_obs] = sigma_u * sigma_u / n;
                let mut o = DVector::zeros(n_obs + 1);
                o.rows_mut(0, n_obs).copy_from(xt);
                o[n_obs] = mean;
                (s_aug, r, o)
            }
            None => (
                model.s().clone(),
                model.sigma_e().map(|sd| sd * sd),
                xt.clone(),
            ),
        };
        let innovation = &obs - &s_t * &pred_mean;
        let mut f = &s_t * &pred_cov * s_t.transpose();
        for k in 0..f.nrows() {
            f[(k, k)] += r_diag[k];
        }
        let chol = Cholesky::new(crate::statespace::symmetrize(&f)).ok_or_else(|| {
            crate::Error::Computation(format!("singular innovation covariance at t={t}"))
        })?;
        let diag = chol.l_dirty().diagonal();
        let max_d = diag.iter().fold(0.0f64, |m, &v| m.max(v));
        if diag.iter().any(|&v| v * v <= 1e-12 * max_d.max(1.0)) {
            return numeric(format!("near-singular innovation covariance at t={t}"));
        }
        let logdet = 2.0 * diag.iter().map(|v| v.ln()).sum::<f64>();
        let solved = chol.solve(&innovation);
        loglik += -0.5 * (innovation.len() as f64 * two_pi_ln + logdet + innovation.dot(&solved));

        // Joseph-form update, then predict.
        let gain = &pred_cov * s_t.transpose() * chol.inverse();
        let filt_mean = &pred_mean + &gain * &innovation;
        let i_ks = DMatrix::identity(n_state, n_state) - &gain * &s_t;
        let mut filt_cov = &i_ks * &pred_cov * i_ks.transpose();
        filt_cov += &gain * DMatrix::from_diagonal(&r_diag) * gain.transpose();
        let filt_cov = crate::statespace::symmetrize(&filt_cov);

        pred_mean = model.zbar() + model.a() * (filt_mean - model.zbar());
        pred_cov = crate::statespace::symmetrize(
            &(model.a() * filt_cov * model.a().transpose() + model.b() * model.b().transpose()),
        );
    }
    Ok(loglik)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statespace::simulate;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn toy_model(rho: f64, sigma_z: f64, sigma_e: f64) -> StateSpaceModel {
        StateSpaceModel::new(
            DVector::zeros(1),
            DMatrix::from_element(1, 1, rho),
            DMatrix::from_element(1, 1, sigma_z),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, sigma_e),
        )
        .unwrap()
    }

    /// Simulated toy data: macro series plus micro blocks at `times`.
    fn toy_data(
        model: &StateSpaceModel,
        family: &GaussianMicroFamily,
        horizon: usize,
        times: &[usize],
        n_per: usize,
        seed: u64,
    ) -> (Vec<DVector<f64>>, MicroDataset) {
        let path = simulate(model, horizon, seed).unwrap();
        let mut rng = crate::rng::substream(seed, 999);
        let blocks = times
            .iter()
            .map(|&t| MicroBlock {
                t,
                records: family.simulate(t, &path.states, n_per, &mut rng).unwrap(),
            })
            .collect();
        (path.obs, MicroDataset::new(blocks).unwrap())
    }

    #[test]
    fn logmeanexp_basics() {
        assert_close(logmeanexp(&[1f64.ln(), 3f64.ln()]), 2f64.ln(), 1e-14);
        assert_close(logmeanexp(&[5.0, 5.0, 5.0]), 5.0, 1e-14);
        // Stable under large offsets.
        assert_close(
            logmeanexp(&[1000.0, 1000.0 + 3f64.ln()]),
            1000.0 + 2f64.ln(),
            1e-12,
        );
        // −∞ entries are zero likelihood levels, not poison.
        assert_close(logmeanexp(&[f64::NEG_INFINITY, 0.0]), (0.5f64).ln(), 1e-14);
        assert_eq!(logmeanexp(&[]), f64::NEG_INFINITY);
        assert_eq!(
            logmeanexp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn exact_joint_loglik_matches_dense_gaussian() {
        // Oracle: for the linear toy everything is jointly Gaussian, so
        // the joint log likelihood of (x_{1:3}, y blocks) has a closed
        // form from the stacked covariance matrix. Cov(z_s, z_t) =
        // ρ^{|s−t|} σ∞²; x_t = z_t + e_t; y_{i,t} = z_t + u_{i,t}.
        let (rho, sigma_z, sigma_e, sigma_u) = (0.7, 0.5, 0.3, 0.4);
        let model = toy_model(rho, sigma_z, sigma_e);
        let var_inf = sigma_z * sigma_z / (1.0 - rho * rho);
        let horizon = 3;
        let micro_times = [2usize, 3];
        let n_per = 2;

        let family = GaussianMicroFamily::new(DVector::from_element(1, 1.0), sigma_u).unwrap();
        let (x, data) = toy_data(&model, &family, horizon, &micro_times, n_per, 42);

        // Stack x_1..x_3 then the micro records block by block.
        let mut labels: Vec<(usize, bool)> = (1..=horizon).map(|t| (t, false)).collect();
        let mut values: Vec<f64> = x.iter().map(|v| v[0]).collect();
        for block in data.blocks() {
            for rec in &block.records {
                labels.push((block.t, true));
                values.push(rec.y[0]);
            }
        }
        let dim = values.len();
        let mut cov = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                let (ti, micro_i) = labels[i];
                let (tj, micro_j) = labels[j];
                let mut c = rho.powi((ti as i32 - tj as i32).abs()) * var_inf;
                if i == j {
                    c += if micro_i {
                        sigma_u * sigma_u
                    } else {
                        sigma_e * sigma_e
                    };
                }
                // Distinct micro units share only the state; same unit
                // appears once per block so no extra same-unit terms.
                let _ = micro_j;
                cov[(i, j)] = c;
            }
        }
        let y = DVector::from_vec(values);
        let chol = Cholesky::new(cov).unwrap();
        let logdet = 2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|v| v.ln())
                .sum::<f64>();
        let solved = chol.solve(&y);
        let dense =
            -0.5 * (dim as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + y.dot(&solved));

        let exact = gaussian_micro_joint_loglik(&model, &x, &data, family.load(), sigma_u).unwrap();
        assert_close(exact, dense, 1e-9);
    }

    #[test]
    fn single_record_blocks_need_no_residual_term() {
        // With N_t = 1 the residual factor is exactly 1; the augmented
        // filter alone must reproduce the dense answer. Covered by using
        // one-record blocks and comparing against the generic dense path
        // through the same oracle construction as above, at a different
        // seed.
        let (rho, sigma_z, sigma_e, sigma_u) = (0.4, 0.9, 0.25, 0.6);
        let model = toy_model(rho, sigma_z, sigma_e);
        let family = GaussianMicroFamily::new(DVector::from_element(1, 1.0), sigma_u).unwrap();
        let (x, data) = toy_data(&model, &family, 4, &[1, 4], 1, 7);
        let var_inf = sigma_z * sigma_z / (1.0 - rho * rho);

        let mut labels: Vec<(usize, bool)> = (1..=4).map(|t| (t, false)).collect();
        let mut values: Vec<f64> = x.iter().map(|v| v[0]).collect();
        for block in data.blocks() {
            for rec in &block.records {
                labels.push((block.t, true));
                values.push(rec.y[0]);
            }
        }
        let dim = values.len();
        let mut cov = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                let (ti, mi) = labels[i];
                let (tj, _) = labels[j];
                let mut c = rho.powi((ti as i32 - tj as i32).abs()) * var_inf;
                if i == j {
                    c += if mi {
                        sigma_u * sigma_u
                    } else {
                        sigma_e * sigma_e
                    };
                }
                cov[(i, j)] = c;
            }
        }
        let y = DVector::from_vec(values);
        let chol = Cholesky::new(cov).unwrap();
        let logdet = 2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|v| v.ln())
                .sum::<f64>();
        let solved = chol.solve(&y);
        let dense =
            -0.5 * (dim as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + y.dot(&solved));
        let exact = gaussian_micro_joint_loglik(&model, &x, &data, family.load(), sigma_u).unwrap();
        assert_close(exact, dense, 1e-9);
    }

    #[test]
    fn level_estimator_is_unbiased_at_one_draw() {
        // The pseudo-marginal property: averaging likelihood levels over
        // smoother draws estimates E[p(y|z)|x] without bias even at J=1.
        // Check E_seeds[exp(estimate − exact)] = 1 within Monte Carlo
        // error on one fixed dataset.
        let model = toy_model(0.6, 0.7, 0.35);
        let sigma_u = 0.5;
        let family = GaussianMicroFamily::new(DVector::from_element(1, 1.0), sigma_u).unwrap();
        let (x, data) = toy_data(&model, &family, 6, &[3, 5], 6, 11);
        let exact = gaussian_micro_joint_loglik(&model, &x, &data, family.load(), sigma_u).unwrap();
        let macro_ll = kalman_filter(&model, &x).unwrap().loglik;
        let exact_micro = exact - macro_ll;

        let reps = 4000;
        let ratios: Vec<f64> = (0..reps)
            .map(|s| {
                let est = full_info_loglik(&model, &family, &x, &data, 1, 10_000 + s).unwrap();
                (est.micro_loglik - exact_micro).exp()
            })
            .collect();
        let mean = ratios.iter().sum::<f64>() / reps as f64;
        let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let se = (var / reps as f64).sqrt();
        assert!(
            (mean - 1.0).abs() <= 4.0 * se,
            "level ratio mean {mean} (se {se}) not within 4 SE of 1"
        );
        // The J-draw average converges to the exact value in log space.
        let big = full_info_loglik(&model, &family, &x, &data, 4000, 123).unwrap();
        let levels: Vec<f64> = big
            .per_draw
            .iter()
            .map(|&l| (l - exact_micro).exp())
            .collect();
        let lmean = levels.iter().sum::<f64>() / levels.len() as f64;
        let lvar =
            levels.iter().map(|r| (r - lmean).powi(2)).sum::<f64>() / (levels.len() - 1) as f64;
        let lse = (lvar / levels.len() as f64).sqrt() / lmean;
        assert!(
            (big.micro_loglik - exact_micro).abs() <= 4.0 * lse + 1e-6,
            "J-average off: {} vs {exact_micro} (rel se {lse})",
            big.micro_loglik
        );
    }

    #[test]
    fn estimates_are_seed_deterministic_and_pool_independent() {
        let model = toy_model(0.8, 0.4, 0.2);
        let family = GaussianMicroFamily::new(DVector::from_element(1, 1.0), 0.3).unwrap();
        let (x, data) = toy_data(&model, &family, 10, &[4, 8], 5, 33);

        let a = full_info_loglik(&model, &family, &x, &data, 16, 777).unwrap();
        let b = full_info_loglik(&model, &family, &x, &data, 16, 777).unwrap();
        assert_eq!(a.total().to_bits(), b.total().to_bits());
        assert_ne!(
            a.total().to_bits(),
            full_info_loglik(&model, &family, &x, &data, 16, 778)
                .unwrap()
                .total()
                .to_bits(),
            "different smoother seeds should perturb a finite-J estimate"
        );

        // Thread-count invariance: the same bits from 1- and 4-thread pools.
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| full_info_loglik(&model, &family, &x, &data, 16, 777).unwrap());
        let quad = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| full_info_loglik(&model, &family, &x, &data, 16, 777).unwrap());
        assert_eq!(single.total().to_bits(), quad.total().to_bits());
        assert_eq!(single.per_draw, quad.per_draw);
    }

    #[test]
    fn rejects_inconsistent_inputs() {
        let model = toy_model(0.5, 0.5, 0.2);
        let family = GaussianMicroFamily::new(DVector::from_element(1, 1.0), 0.3).unwrap();
        let (x, data) = toy_data(&model, &family, 4, &[4], 3, 1);
        // Micro data beyond the macro sample.
        assert!(full_info_loglik(&model, &family, &x[..2], &data, 4, 1).is_err());
        // Loading dimension mismatch.
        let bad = DVector::from_element(2, 1.0);
        assert!(gaussian_micro_joint_loglik(&model, &x, &data, &bad, 0.3).is_err());
        assert!(GaussianMicroFamily::new(DVector::from_element(1, 1.0), 0.0).is_err());
    }
}
