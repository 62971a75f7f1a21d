//! Exponential-polynomial densities on a bounded support, pinned by their
//! first `q` moments:
//!
//! `g(a) = exp{ φ₀ + φ₁ (a − m₁) + Σ_{ℓ=2..q} φ_ℓ [ (a − m₁)^ℓ − m_ℓ ] }`,
//!
//! where `m₁` is the mean and `m_ℓ` the central moments. The coefficients
//! are the solution of the moment-matching conditions `∫ g = 1`,
//! `∫ (a − m₁) g = 0`, `∫ (a − m₁)^ℓ g = m_ℓ`; equivalently `g` is the
//! maximum-entropy density with those moments, which makes a small number
//! of cross-sectional moments a complete description of the distribution.
//!
//! The fit runs a damped Newton iteration from `φ = 0` (the uniform
//! density) on the support rescaled to `[−1, 1]`; the Jacobian of the
//! moment conditions is the covariance matrix of the polynomial statistics
//! under the current iterate, so it is symmetric positive definite and the
//! iteration is well behaved whenever the targets are attainable.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng as _;

use crate::error::{invalid, Error, Result};
use crate::interp::MonotoneCdf;
use crate::quad::{QuadRule, QuadSpec};
use crate::rng;

/// Newton iteration cap for [`fit_coefficients`].
pub const FIT_MAX_ITER: usize = 200;
/// Convergence tolerance on the moment residuals (rescaled units).
pub const FIT_TOL: f64 = 1e-10;

/// Panels used for the cumulative-integral table backing `cdf_at`/`sample`.
const CDF_PANELS: usize = 8192;

/// A fitted exponential-polynomial density.
#[derive(Debug, Clone)]
pub struct ExpFamDensity {
    support: (f64, f64),
    q: usize,
    m1: f64,
    central: Vec<f64>,
    /// `φ_0 ..= φ_q` in the units of `a`.
    coeffs: Vec<f64>,
    quad: QuadSpec,
    /// Cumulative table, built on first use — likelihood evaluation never
    /// touches it, only `cdf_at` and `sample`.
    cdf: std::sync::OnceLock<MonotoneCdf>,
}

impl ExpFamDensity {
    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    /// Polynomial order `q` (number of matched moments).
    pub fn order(&self) -> usize {
        self.q
    }

    /// Target mean.
    pub fn mean_target(&self) -> f64 {
        self.m1
    }

    /// Target central moments `m_2 ..= m_q`.
    pub fn central_targets(&self) -> &[f64] {
        &self.central
    }

    /// Coefficients `φ_0 ..= φ_q`.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Density at `a`; zero outside the support.
    pub fn density_at(&self, a: f64) -> f64 {
        let (lo, hi) = self.support;
        if !(lo..=hi).contains(&a) {
            return 0.0;
        }
        let d = a - self.m1;
        let mut exponent = self.coeffs[0] + self.coeffs[1] * d;
        let mut dp = d;
        for ell in 2..=self.q {
            dp *= d;
            exponent += self.coeffs[ell] * (dp - self.central[ell - 2]);
        }
        exponent.exp()
    }

    /// Mean and central moments `2 ..= upto` implied by the density,
    /// recomputed by quadrature (not the stored targets).
    pub fn moments_of(&self, upto: usize) -> Result<(f64, Vec<f64>)> {
        if upto == 0 {
            return invalid("moment order must be at least 1");
        }
        let rule = QuadRule::gauss_legendre(self.quad.nodes, self.support.0, self.support.1)?;
        let mean = rule.integrate(|a| a * self.density_at(a));
        let central = (2..=upto)
            .map(|ell| rule.integrate(|a| (a - mean).powi(ell as i32) * self.density_at(a)))
            .collect();
        Ok((mean, central))
    }

    fn cdf_table(&self) -> &MonotoneCdf {
        self.cdf.get_or_init(|| {
            cumulative_table(self).expect("fitted density has a positive finite integral")
        })
    }

    /// `P(A ≤ a)` from the cumulative table.
    pub fn cdf_at(&self, a: f64) -> f64 {
        if a <= self.support.0 {
            0.0
        } else if a >= self.support.1 {
            1.0
        } else {
            self.cdf_table().cdf(a)
        }
    }

    /// Inverse-CDF draw on the monotone cumulative table.
    pub fn sample(&self, rng: &mut rng::Rng) -> f64 {
        self.cdf_table().quantile(rng.gen::<f64>())
    }
}

/// Fit an exponential-polynomial density of order `q = 1 + central.len()`
/// with mean `m1` and central moments `central = [m_2, .., m_q]` on
/// `support`, using `quad` nodes for all integrals.
///
/// Fails with a validation error when the targets are plainly infeasible
/// (mean outside the support, variance above the Bhatia–Davis bound
/// `(hi − m₁)(m₁ − lo)`) and with a convergence error carrying the final
/// residual when Newton stalls.
pub fn fit_coefficients(
    m1: f64,
    central: &[f64],
    support: (f64, f64),
    quad: QuadSpec,
) -> Result<ExpFamDensity> {
    let (lo, hi) = support;
    if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
        return invalid(format!("invalid support [{lo}, {hi}]"));
    }
    if !m1.is_finite() || central.iter().any(|v| !v.is_finite()) {
        return invalid("moment targets must be finite");
    }
    if m1 <= lo || m1 >= hi {
        return invalid(format!(
            "target mean {m1} outside the open support ({lo}, {hi})"
        ));
    }
    let q = 1 + central.len();
    if q >= 2 {
        let m2 = central[0];
        let bound = (hi - m1) * (m1 - lo);
        if m2 <= 0.0 {
            return invalid("target variance must be positive");
        }
        if m2 >= bound {
            return invalid(format!(
                "target variance {m2} is not attainable on the support (bound {bound})"
            ));
        }
    }

    // Rescale to u = (a − mid)/half ∈ [−1, 1]; the statistics are
    // (u − c)^ℓ with c the rescaled mean, targets τ_ℓ = m_ℓ / half^ℓ.
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    let c = (m1 - mid) / half;
    let mut targets = vec![0.0; q];
    for (ell, m) in central.iter().enumerate() {
        targets[ell + 1] = m / half.powi(ell as i32 + 2);
    }

    let rule = QuadRule::gauss_legendre(quad.nodes, -1.0, 1.0)?;
    let n = rule.nodes.len();
    // stats[ℓ][k] = (u_k − c)^(ℓ+1)
    let mut stats = vec![vec![0.0; n]; q];
    for k in 0..n {
        let d = rule.nodes[k] - c;
        let mut dp = 1.0;
        for row in stats.iter_mut() {
            dp *= d;
            row[k] = dp;
        }
    }

    // Moment residuals and normalized node weights at `phi`.
    let eval = |phi: &DVector<f64>| -> (DVector<f64>, Vec<f64>, f64) {
        let mut s = vec![0.0; n];
        for (ell, row) in stats.iter().enumerate() {
            let p = phi[ell];
            for k in 0..n {
                s[k] += p * (row[k] - targets[ell]);
            }
        }
        let smax = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        let mut weights = vec![0.0; n];
        for k in 0..n {
            let w = rule.weights[k] * (s[k] - smax).exp();
            weights[k] = w;
            z += w;
        }
        for w in weights.iter_mut() {
            *w /= z;
        }
        let mut resid = DVector::zeros(q);
        for (ell, row) in stats.iter().enumerate() {
            let mut e = 0.0;
            for k in 0..n {
                e += weights[k] * row[k];
            }
            resid[ell] = e - targets[ell];
        }
        // log ∫ exp(s) = smax + ln z (for φ₀ once converged).
        (resid, weights, smax + z.ln().max(f64::NEG_INFINITY) + 0.0)
    };

    let mut phi = DVector::zeros(q);
    let (mut resid, mut weights, mut log_z) = eval(&phi);
    let mut converged = resid.amax() <= FIT_TOL;
    for _ in 0..FIT_MAX_ITER {
        if converged {
            break;
        }
        // Newton direction from the statistic covariance (SPD Jacobian).
        let mut h = DMatrix::zeros(q, q);
        let mut means = vec![0.0; q];
        for (ell, row) in stats.iter().enumerate() {
            means[ell] = row.iter().zip(&weights).map(|(t, w)| t * w).sum();
        }
        for i in 0..q {
            for j in i..q {
                let mut e = 0.0;
                for k in 0..n {
                    e += weights[k] * stats[i][k] * stats[j][k];
                }
                let cov = e - means[i] * means[j];
                h[(i, j)] = cov;
                h[(j, i)] = cov;
            }
        }
        let mut ridge = 0.0;
        let delta = loop {
            let mut hr = h.clone();
            for i in 0..q {
                hr[(i, i)] += ridge;
            }
            if let Some(chol) = Cholesky::new(hr) {
                break chol.solve(&(-&resid));
            }
            ridge = if ridge == 0.0 {
                1e-12 * (1.0 + h.trace())
            } else {
                ridge * 10.0
            };
            if ridge > 1e6 {
                return Err(Error::Convergence {
                    context: "exponential-family moment fit (singular Jacobian)".into(),
                    residual: resid.amax(),
                });
            }
        };
        // Halve the step until the residual norm improves.
        let base_norm = resid.norm();
        let mut lambda = 1.0;
        loop {
            let trial = &phi + lambda * &delta;
            let (r_trial, w_trial, z_trial) = eval(&trial);
            if r_trial.norm() < base_norm || lambda < 1e-4 {
                phi = trial;
                resid = r_trial;
                weights = w_trial;
                log_z = z_trial;
                break;
            }
            lambda *= 0.5;
        }
        converged = resid.amax() <= FIT_TOL;
    }
    if !converged {
        return Err(Error::Convergence {
            context: "exponential-family moment fit".into(),
            residual: resid.amax(),
        });
    }

    // Map back to the units of `a`: φ_ℓ = φ_ℓ^u / half^ℓ, and the
    // normalizer picks up the Jacobian of the rescaling.
    let mut coeffs = vec![0.0; q + 1];
    coeffs[0] = -log_z - half.ln();
    for ell in 1..=q {
        coeffs[ell] = phi[ell - 1] / half.powi(ell as i32);
    }

    Ok(ExpFamDensity {
        support,
        q,
        m1,
        central: central.to_vec(),
        coeffs,
        quad,
        cdf: std::sync::OnceLock::new(),
    })
}

/// Composite-Simpson cumulative integral of the density on a fine uniform
/// grid, normalized to end at 1.
fn cumulative_table(density: &ExpFamDensity) -> Result<MonotoneCdf> {
    let (lo, hi) = density.support;
    let h = (hi - lo) / CDF_PANELS as f64;
    let mut xs = Vec::with_capacity(CDF_PANELS + 1);
    let mut ps = Vec::with_capacity(CDF_PANELS + 1);
    let mut acc = 0.0;
    xs.push(lo);
    ps.push(0.0);
    let mut left = density.density_at(lo);
    for k in 0..CDF_PANELS {
        let a = lo + h * k as f64;
        let midv = density.density_at(a + 0.5 * h);
        let right = density.density_at(a + h);
        acc += h / 6.0 * (left + 4.0 * midv + right);
        xs.push(a + h);
        ps.push(acc);
        left = right;
    }
    if !(acc.is_finite() && acc > 0.0) {
        return crate::error::numeric("cumulative integral of fitted density is degenerate");
    }
    for p in ps.iter_mut() {
        *p /= acc;
    }
    MonotoneCdf::new(xs, ps)
}
