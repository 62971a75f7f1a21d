//! Shared distribution helpers: Gaussian and χ² evaluations plus a
//! one-sample Kolmogorov–Smirnov test.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{invalid, Result};

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal log-density.
pub fn norm_logpdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Standard normal CDF `Φ(x)`.
pub fn norm_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// χ² CDF with `k` degrees of freedom.
pub fn chi2_cdf(x: f64, k: f64) -> Result<f64> {
    let dist = ChiSquared::new(k)
        .map_err(|e| crate::Error::Validation(format!("chi-squared dof {k}: {e}")))?;
    Ok(if x <= 0.0 { 0.0 } else { dist.cdf(x) })
}

/// Log-density of a lognormal with log-scale `mu` and log-sd `sigma > 0`.
pub fn lognormal_logpdf(x: f64, mu: f64, sigma: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let z = (x.ln() - mu) / sigma;
    norm_logpdf(z) - sigma.ln() - x.ln()
}

/// Outcome of a one-sample Kolmogorov–Smirnov test.
#[derive(Debug, Clone, Copy)]
pub struct KsOutcome {
    /// Supremum distance between the empirical CDF and the reference.
    pub statistic: f64,
    /// Asymptotic p-value from the Kolmogorov distribution.
    pub p_value: f64,
}

/// One-sample KS test of `sample` against the continuous CDF `cdf`.
pub fn ks_test(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsOutcome> {
    if sample.is_empty() {
        return invalid("KS test needs a non-empty sample");
    }
    let mut sorted = sample.to_vec();
    if sorted.iter().any(|v| !v.is_finite()) {
        return invalid("KS test sample must be finite");
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x).clamp(0.0, 1.0);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    Ok(KsOutcome {
        statistic: d,
        p_value: ks_pvalue(d, sorted.len()),
    })
}

/// Asymptotic KS p-value with the Stephens small-sample correction
/// `λ = (√n + 0.12 + 0.11/√n) · d`.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sqrt_n = (n as f64).sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-12 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
