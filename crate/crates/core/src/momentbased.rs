//! Moment-based baseline likelihoods.
//!
//! Instead of scoring every micro record, this route compresses each
//! cross section into a few sample moments per employment group and
//! treats them as extra time-series observables: the observation vector
//! at `t ∈ 𝒯` becomes `[x_t; m̂_t]`, the model maps the state into
//! population moments affinely, and the moment rows carry a Gaussian
//! measurement error whose variance-covariance comes from the CLT
//! formulas below, built once from full-sample time-averaged moments
//! (time-invariant by construction).
//!
//! The moment blocks use the layout `index = 3·g + (j − 1)` for group
//! `g ∈ {0, 1}` (unemployed, employed) and moment order `j ∈ {1, 2, 3}`
//! (mean, variance, third central moment).
//!
//! The route is a Gaussian approximation: `N·m̂₂/m₂` is exactly
//! `χ²(N − 1)` under Gaussian cross sections, which
//! [`chi2_moment_distribution_test`] verifies and which a normal
//! approximation misses at small `N`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{invalid, numeric, Result};
use crate::microdens::MicroDataset;
use crate::rng;
use crate::statespace::{symmetrize, StateSpaceModel};
use crate::stats::{chi2_cdf, ks_test, KsOutcome};

/// Highest moment order carried per group in [`MomentSeries`].
pub const OBS_ORDER: usize = 3;
/// Moment order needed by the variance-covariance formulas.
pub const VCV_ORDER: usize = 6;

/// Sample mean and central moments `[m̂₁, m̂₂, …, m̂_upto]` with no
/// degree-of-freedom corrections: `m̂₁ = N⁻¹Σv_i`,
/// `m̂_ℓ = N⁻¹Σ(v_i − m̂₁)^ℓ`.
pub fn central_moments(values: &[f64], upto: usize) -> Result<Vec<f64>> {
    if values.is_empty() {
        return invalid("central moments need at least one value");
    }
    if upto == 0 {
        return invalid("moment order must be at least 1");
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut out = vec![mean];
    for ell in 2..=upto {
        out.push(
            values
                .iter()
                .map(|v| (v - mean).powi(ell as i32))
                .sum::<f64>()
                / n,
        );
    }
    Ok(out)
}

/// Per-group central moments of one period's `(ε, ι)` records: group `g`
/// collects the records with `y[0] = g`, and the moments are those of
/// `y[1]`. Errors if either group is empty.
pub fn group_central_moments(
    records: &[crate::microdens::MicroRecord],
    upto: usize,
) -> Result<[Vec<f64>; 2]> {
    let mut groups: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for rec in records {
        if rec.y.len() < 2 {
            return invalid("moment records need (ε, ι) observables");
        }
        let g = rec.y[0];
        if g != 0.0 && g != 1.0 {
            return invalid(format!("employment indicator must be 0 or 1, got {g}"));
        }
        groups[g as usize].push(rec.y[1]);
    }
    for (g, vals) in groups.iter().enumerate() {
        if vals.is_empty() {
            return invalid(format!("employment group {g} is empty"));
        }
    }
    Ok([
        central_moments(&groups[0], upto)?,
        central_moments(&groups[1], upto)?,
    ])
}

/// Cross-sectional sample moments per period and employment group, plus
/// the full-sample time averages the vcv construction needs.
#[derive(Debug, Clone)]
pub struct MomentSeries {
    times: Vec<usize>,
    observed: Vec<[[f64; OBS_ORDER]; 2]>,
    averaged: [[f64; VCV_ORDER]; 2],
    n_hat: [f64; 2],
}

impl MomentSeries {
    /// Compress a `(ε, ι)` dataset: per period, per group, central
    /// moments to order 3 (the observables) and to order 6 time-averaged
    /// (the vcv inputs), with `N̂_g` the average group size over `𝒯`.
    pub fn from_dataset(data: &MicroDataset) -> Result<MomentSeries> {
        if data.y_len() < 2 {
            return invalid("moment series need (ε, ι) records");
        }
        let n_periods = data.blocks().len() as f64;
        let mut times = Vec::new();
        let mut observed = Vec::new();
        let mut averaged = [[0.0; VCV_ORDER]; 2];
        let mut n_hat = [0.0; 2];
        for block in data.blocks() {
            let groups = group_central_moments(&block.records, VCV_ORDER)?;
            let mut obs_t = [[0.0; OBS_ORDER]; 2];
            for g in 0..2 {
                for j in 0..OBS_ORDER {
                    obs_t[g][j] = groups[g][j];
                }
                for j in 0..VCV_ORDER {
                    averaged[g][j] += groups[g][j] / n_periods;
                }
            }
            n_hat[0] += block.records.iter().filter(|r| r.y[0] == 0.0).count() as f64 / n_periods;
            n_hat[1] += block.records.iter().filter(|r| r.y[0] == 1.0).count() as f64 / n_periods;
            times.push(block.t);
            observed.push(obs_t);
        }
        Ok(MomentSeries {
            times,
            observed,
            averaged,
            n_hat,
        })
    }

    pub fn times(&self) -> &[usize] {
        &self.times
    }

    /// Time-averaged moments `m̂_{gj}`, `j = 1..=6`.
    pub fn averaged(&self) -> &[[f64; VCV_ORDER]; 2] {
        &self.averaged
    }

    /// Average per-period group sizes `(N̂_0, N̂_1)`.
    pub fn n_hat(&self) -> [f64; 2] {
        self.n_hat
    }

    /// Stacked observation vectors for the first `order` moments of both
    /// groups, one per element of `times()`, in block layout.
    pub fn observed_vectors(&self, order: usize) -> Result<Vec<DVector<f64>>> {
        if !(1..=OBS_ORDER).contains(&order) {
            return invalid(format!("moment order {order} outside 1..=3"));
        }
        Ok(self
            .observed
            .iter()
            .map(|per_group| {
                DVector::from_iterator(
                    2 * order,
                    (0..2).flat_map(|g| per_group[g][..order].iter().copied()),
                )
            })
            .collect())
    }
}

/// Time-invariant measurement-error variance-covariance of the stacked
/// moment vector (block-diagonal over the two employment groups).
#[derive(Debug, Clone)]
pub struct MomentVcv {
    matrix: DMatrix<f64>,
}

impl MomentVcv {
    /// The full `6×6` matrix in block layout.
    pub fn full(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Submatrix for the first `order` moments of both groups
    /// (`2·order × 2·order`).
    pub fn selected(&self, order: usize) -> Result<DMatrix<f64>> {
        if !(1..=OBS_ORDER).contains(&order) {
            return invalid(format!("moment order {order} outside 1..=3"));
        }
        let idx: Vec<usize> = (0..2)
            .flat_map(|g| (0..order).map(move |j| OBS_ORDER * g + j))
            .collect();
        let mut out = DMatrix::zeros(idx.len(), idx.len());
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                out[(a, b)] = self.matrix[(i, j)];
            }
        }
        Ok(out)
    }
}

/// CLT variance-covariance of `(m̂₁, m̂₂, m̂₃)` per group from the
/// time-averaged moments, cross-group blocks zero:
///
/// ```text
/// V[m̂₁] = m₂/N̂            Cov[m̂₁, m̂₂] = m₃/N̂
/// V[m̂₂] = (m₄ − m₂²)/N̂    Cov[m̂₁, m̂₃] = (m₄ − 3m₂²)/N̂
/// V[m̂₃] = (m₆ − 6m₄m₂ − m₃² + 9m₂³)/N̂
///                          Cov[m̂₂, m̂₃] = (m₅ − 4m₃m₂)/N̂
/// ```
///
/// Sixth-moment plug-ins can leave the matrix slightly indefinite in
/// small samples, so eigenvalues below `1e-12·trace` are clipped up to
/// that floor; indefiniteness beyond `−1e-6·λ_max` is an error.
pub fn moment_vcv(averaged: &[[f64; VCV_ORDER]; 2], n_hat: [f64; 2]) -> Result<MomentVcv> {
    let mut matrix = DMatrix::zeros(2 * OBS_ORDER, 2 * OBS_ORDER);
    for g in 0..2 {
        let n = n_hat[g];
        if !(n.is_finite() && n > 0.0) {
            return invalid(format!("group {g} sample size must be positive, got {n}"));
        }
        let m = &averaged[g];
        if m.iter().any(|v| !v.is_finite()) {
            return invalid(format!("group {g} moments must be finite"));
        }
        let (m2, m3, m4, m5, m6) = (m[1], m[2], m[3], m[4], m[5]);
        let o = OBS_ORDER * g;
        matrix[(o, o)] = m2 / n;
        matrix[(o, o + 1)] = m3 / n;
        matrix[(o + 1, o)] = m3 / n;
        matrix[(o, o + 2)] = (m4 - 3.0 * m2 * m2) / n;
        matrix[(o + 2, o)] = (m4 - 3.0 * m2 * m2) / n;
        matrix[(o + 1, o + 1)] = (m4 - m2 * m2) / n;
        matrix[(o + 1, o + 2)] = (m5 - 4.0 * m3 * m2) / n;
        matrix[(o + 2, o + 1)] = (m5 - 4.0 * m3 * m2) / n;
        matrix[(o + 2, o + 2)] = (m6 - 6.0 * m4 * m2 - m3 * m3 + 9.0 * m2.powi(3)) / n;
    }

    // PSD repair by eigenvalue clipping.
    let eig = matrix.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |acc, &v| acc.max(v));
    let min_ev = eig
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, &v| acc.min(v));
    if min_ev < -1e-6 * max_ev.max(1e-300) {
        return numeric(format!(
            "moment vcv is indefinite beyond repair (eigenvalues {min_ev:.3e} .. {max_ev:.3e})"
        ));
    }
    let floor = 1e-12 * matrix.trace().max(1e-300);
    if min_ev < floor {
        let clipped = DVector::from_iterator(
            eig.eigenvalues.len(),
            eig.eigenvalues.iter().map(|&v| v.max(floor)),
        );
        let repaired =
            &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
        return Ok(MomentVcv {
            matrix: symmetrize(&repaired),
        });
    }
    Ok(MomentVcv { matrix })
}

/// Affine map from the state to population moments:
/// `μ(z) = intercept + coeff·z`.
#[derive(Debug, Clone)]
pub struct AffineMomentMap {
    coeff: DMatrix<f64>,
    intercept: DVector<f64>,
}

impl AffineMomentMap {
    pub fn new(coeff: DMatrix<f64>, intercept: DVector<f64>) -> Result<AffineMomentMap> {
        if coeff.nrows() == 0 || coeff.nrows() != intercept.len() {
            return invalid("moment map needs matching, non-empty coefficient rows");
        }
        if coeff.iter().any(|v| !v.is_finite()) || intercept.iter().any(|v| !v.is_finite()) {
            return invalid("moment map must be finite");
        }
        Ok(AffineMomentMap { coeff, intercept })
    }

    pub fn rows(&self) -> usize {
        self.coeff.nrows()
    }

    pub fn coeff(&self) -> &DMatrix<f64> {
        &self.coeff
    }

    pub fn intercept(&self) -> &DVector<f64> {
        &self.intercept
    }

    /// Keep the given rows (for moment-order selection).
    pub fn select_rows(&self, rows: &[usize]) -> Result<AffineMomentMap> {
        if rows.iter().any(|&r| r >= self.rows()) {
            return invalid("moment map row selection out of range");
        }
        let coeff = DMatrix::from_fn(rows.len(), self.coeff.ncols(), |i, j| {
            self.coeff[(rows[i], j)]
        });
        let intercept = DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.intercept[r]));
        AffineMomentMap::new(coeff, intercept)
    }
}

/// Kalman log likelihood of the macro series augmented with moment rows
/// at `times`: observation `[x_t; m̂_t]` with `m̂_t ~ N(intercept +
/// coeff·z_t, noise)`, moment rows simply absent for `t ∉ times` (row
/// selection, not giant variances). This is the generic engine;
/// [`moment_loglik`] applies it to the household layout.
pub fn augmented_moment_loglik(
    model: &StateSpaceModel,
    x: &[DVector<f64>],
    times: &[usize],
    observed: &[DVector<f64>],
    map: &AffineMomentMap,
    noise: &DMatrix<f64>,
) -> Result<f64> {
    let n_obs = model.n_obs();
    let n_state = model.n_state();
    let m_rows = map.rows();
    if map.coeff().ncols() != n_state {
        return invalid("moment map columns must match the state dimension");
    }
    if times.len() != observed.len() {
        return invalid("one observed moment vector per time is required");
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("moment times must be strictly increasing");
    }
    if let (Some(&first), Some(&last)) = (times.first(), times.last()) {
        if first == 0 || last > x.len() {
            return invalid("moment times must lie within the macro sample");
        }
    }
    if observed.iter().any(|v| v.len() != m_rows) {
        return invalid("observed moment vectors must match the map rows");
    }
    if noise.nrows() != m_rows || noise.ncols() != m_rows {
        return invalid("moment noise must be square with one row per moment");
    }
    if noise.iter().any(|v| !v.is_finite()) {
        return invalid("moment noise must be finite");
    }

    let mut moment_at = vec![None; x.len() + 1];
    for (k, &t) in times.iter().enumerate() {
        moment_at[t] = Some(k);
    }
    let two_pi_ln = (2.0 * std::f64::consts::PI).ln();

    let mut pred_mean = model.zbar().clone();
    let mut pred_cov = model.stationary().clone();
    let mut loglik = 0.0;
    for (idx, xt) in x.iter().enumerate() {
        if xt.len() != n_obs {
            return invalid(format!(
                "observation at t={} has {} entries, expected {n_obs}",
                idx + 1,
                xt.len()
            ));
        }
        let t = idx + 1;
        let (s_t, noise_t, innovation) = match moment_at[t] {
            Some(k) => {
                let mut s_aug = DMatrix::zeros(n_obs + m_rows, n_state);
                s_aug
                    .view_mut((0, 0), (n_obs, n_state))
                    .copy_from(model.s());
                s_aug
                    .view_mut((n_obs, 0), (m_rows, n_state))
                    .copy_from(map.coeff());
                let mut r = DMatrix::zeros(n_obs + m_rows, n_obs + m_rows);
                for (i, sd) in model.sigma_e().iter().enumerate() {
                    r[(i, i)] = sd * sd;
                }
                r.view_mut((n_obs, n_obs), (m_rows, m_rows))
                    .copy_from(noise);
                let mut innov = DVector::zeros(n_obs + m_rows);
                innov
                    .rows_mut(0, n_obs)
                    .copy_from(&(xt - model.s() * &pred_mean));
                innov
                    .rows_mut(n_obs, m_rows)
                    .copy_from(&(&observed[k] - map.intercept() - map.coeff() * &pred_mean));
                (s_aug, r, innov)
            }
            None => {
                let mut r = DMatrix::zeros(n_obs, n_obs);
                for (i, sd) in model.sigma_e().iter().enumerate() {
                    r[(i, i)] = sd * sd;
                }
                (model.s().clone(), r, xt - model.s() * &pred_mean)
            }
        };
        let f = symmetrize(&(&s_t * &pred_cov * s_t.transpose() + &noise_t));
        let chol = Cholesky::new(f).ok_or_else(|| {
            crate::Error::Computation(format!("singular innovation covariance at t={t}"))
        })?;
        let diag = chol.l_dirty().diagonal();
        let max_d = diag.iter().fold(0.0f64, |acc, &v| acc.max(v));
        if diag.iter().any(|&v| v * v <= 1e-12 * max_d.max(1.0)) {
            return numeric(format!("near-singular innovation covariance at t={t}"));
        }
        let logdet = 2.0 * diag.iter().map(|v| v.ln()).sum::<f64>();
        let solved = chol.solve(&innovation);
        loglik += -0.5 * (innovation.len() as f64 * two_pi_ln + logdet + innovation.dot(&solved));

        let gain = &pred_cov * s_t.transpose() * chol.inverse();
        let filt_mean = &pred_mean + &gain * &innovation;
        let i_ks = DMatrix::identity(n_state, n_state) - &gain * &s_t;
        let filt_cov = symmetrize(
            &(&i_ks * &pred_cov * i_ks.transpose() + &gain * &noise_t * gain.transpose()),
        );

        pred_mean = model.zbar() + model.a() * (filt_mean - model.zbar());
        pred_cov = symmetrize(
            &(model.a() * filt_cov * model.a().transpose() + model.b() * model.b().transpose()),
        );
    }
    Ok(loglik)
}

/// Moment-based joint log likelihood in the household layout: the first
/// `order ∈ {1, 2, 3}` moments of both employment groups enter as extra
/// observables at the periods of `series`, with measurement error from
/// `vcv`. `map` must carry the full six household rows; the order
/// selection keeps rows `3g + j` for `j < order`.
pub fn moment_loglik(
    model: &StateSpaceModel,
    x: &[DVector<f64>],
    series: &MomentSeries,
    vcv: &MomentVcv,
    map: &AffineMomentMap,
    order: usize,
) -> Result<f64> {
    if map.rows() != 2 * OBS_ORDER {
        return invalid("household moment map must have six rows (two groups × three moments)");
    }
    let rows: Vec<usize> = (0..2)
        .flat_map(|g| (0..order).map(move |j| OBS_ORDER * g + j))
        .collect();
    let selected_map = map.select_rows(&rows)?;
    let observed = series.observed_vectors(order)?;
    let noise = vcv.selected(order)?;
    augmented_moment_loglik(model, x, series.times(), &observed, &selected_map, &noise)
}

/// Simulate the exact sampling law of the cross-sectional variance under
/// Gaussian data and KS-test it against `χ²(N − 1)`: with `m̂₂` the
/// uncorrected sample variance of `N` Gaussian draws with population
/// variance `m₂`, the statistic `N·m̂₂/m₂` is exactly `χ²(N − 1)` — not
/// Gaussian, which is why the moment route is an approximation in small
/// cross sections.
pub fn chi2_moment_distribution_test(
    n: usize,
    m2: f64,
    reps: usize,
    seed: u64,
) -> Result<KsOutcome> {
    if n < 2 {
        return invalid("chi-squared law needs at least two observations per cross section");
    }
    if !(m2.is_finite() && m2 > 0.0) {
        return invalid(format!("population variance must be positive, got {m2}"));
    }
    if reps < 10 {
        return invalid("too few replications for a distribution test");
    }
    let mut rng = rng::root(seed);
    let sd = m2.sqrt();
    let stats: Vec<f64> = (0..reps)
        .map(|_| {
            let draws: Vec<f64> = (0..n)
                .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let m2_hat = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            n as f64 * m2_hat / m2
        })
        .collect();
    let dof = (n - 1) as f64;
    chi2_cdf(1.0, dof)?; // validate the dof once; the closure cannot fail after this
    ks_test(&stats, |v| chi2_cdf(v, dof).expect("dof already validated"))
}
