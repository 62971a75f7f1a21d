//! Cross-sectional sufficient statistics.
//!
//! When the cross-sectional density of `y` takes the exponential form
//! `p(y|z) = exp{φ₀(z) + Σ_ℓ φ_ℓ(z) 𝔪_ℓ(y)}`, the joint density of a
//! cross section factorizes through the sample averages of the statistics
//! `𝔪_ℓ`: the average `m̂_ℓ = N⁻¹ Σ_i 𝔪_ℓ(y_i)` is sufficient for `z`.
//! This routine computes those averages for a block of records.

use crate::error::{invalid, Result};
use crate::microdens::MicroRecord;

/// One statistic `𝔪_ℓ`, evaluated on a record's observation vector.
pub type Statistic<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);

/// Sample averages `m̂_ℓ = N⁻¹ Σ_i 𝔪_ℓ(y_i)` of the supplied statistics,
/// in the order given. Every statistic must return a finite value for
/// every record.
pub fn sufficient_statistics(records: &[MicroRecord], stats: &[Statistic]) -> Result<Vec<f64>> {
    if records.is_empty() {
        return invalid("sufficient statistics need at least one record");
    }
    if stats.is_empty() {
        return invalid("no statistics supplied");
    }
    let n = records.len() as f64;
    let mut out = vec![0.0; stats.len()];
    for rec in records {
        for (acc, stat) in out.iter_mut().zip(stats) {
            let v = stat(&rec.y);
            if !v.is_finite() {
                return invalid("statistic evaluated to a non-finite value");
            }
            *acc += v;
        }
    }
    for acc in &mut out {
        *acc /= n;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn records_from(values: &[f64]) -> Vec<MicroRecord> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| MicroRecord::new(i as u64, vec![v]))
            .collect()
    }

    #[test]
    fn averages_match_direct_sums() {
        let recs = records_from(&[1.0, 2.0, 4.0]);
        let m1 = |y: &[f64]| y[0];
        let m2 = |y: &[f64]| y[0] * y[0];
        let out = sufficient_statistics(&recs, &[&m1, &m2]).unwrap();
        assert!((out[0] - 7.0 / 3.0).abs() < 1e-15);
        assert!((out[1] - 7.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_likelihood_depends_on_data_only_through_averages() {
        // For y_i ~ N(z, 1) the joint log density is
        //   Σ_i log φ(y_i − z) = N(−½log2π − ½m̂₂ + z m̂₁ − ½z²),
        // a function of (m̂₁, m̂₂) alone. Two samples engineered to share
        // those averages must give identical log likelihoods at every z —
        // the factorization the whole moment approach rests on.
        let mut rng = crate::rng::root(77);
        let a: Vec<f64> = (0..6)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        // Build b with the same first two moments: reflect around the mean
        // and rescale to match the second moment exactly.
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        let var = a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / a.len() as f64;
        let mut b: Vec<f64> = a.iter().map(|v| 2.0 * mean - v).collect();
        let mean_b = b.iter().sum::<f64>() / b.len() as f64;
        let var_b = b.iter().map(|v| (v - mean_b).powi(2)).sum::<f64>() / b.len() as f64;
        let scale = (var / var_b).sqrt();
        for v in &mut b {
            *v = mean + scale * (*v - mean_b);
        }

        let loglik = |ys: &[f64], z: f64| -> f64 {
            ys.iter().map(|y| crate::stats::norm_logpdf(y - z)).sum()
        };
        let m1 = |y: &[f64]| y[0];
        let m2 = |y: &[f64]| y[0] * y[0];
        let sa = sufficient_statistics(&records_from(&a), &[&m1, &m2]).unwrap();
        let sb = sufficient_statistics(&records_from(&b), &[&m1, &m2]).unwrap();
        assert!((sa[0] - sb[0]).abs() < 1e-12 && (sa[1] - sb[1]).abs() < 1e-12);
        for &z in &[-1.5, -0.2, 0.0, 0.7, 2.0] {
            assert!(
                (loglik(&a, z) - loglik(&b, z)).abs() < 1e-10,
                "likelihood separated samples with identical sufficient statistics at z={z}"
            );
        }
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        let m1 = |y: &[f64]| y[0];
        assert!(sufficient_statistics(&[], &[&m1]).is_err());
        let recs = records_from(&[1.0]);
        let bad = |y: &[f64]| y[0].ln() / 0.0;
        assert!(sufficient_statistics(&recs, &[&bad]).is_err());
        assert!(sufficient_statistics(&recs, &[]).is_err());
    }
}
