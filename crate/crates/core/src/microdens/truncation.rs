//! Selection-truncated densities.
//!
//! A unit drawn from a base density over `y` is observed only when it
//! passes a selection rule; the sampling density of observed units is the
//! base density restricted to the selected set and renormalized by the
//! selection probability. For a Gaussian base with a linear-index rule
//! `c'y ≥ threshold` the normalizer is available in closed form, because a
//! linear index of a Gaussian is Gaussian: `P = 1 − Φ((threshold − c'μ)/σ_c)`
//! with `σ_c² = c'Σc`. For a scalar exponential-polynomial base it comes
//! from the tabulated CDF, and for arbitrary selection predicates the
//! caller supplies the mass.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::expfam::ExpFamDensity;
use crate::rng;
use crate::statespace::symmetrize;
use crate::stats::norm_cdf;

/// Multivariate normal with cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct MvNormal {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    logdet: f64,
}

impl MvNormal {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<MvNormal> {
        let n = mean.len();
        if n == 0 || cov.nrows() != n || cov.ncols() != n {
            return invalid("mean and covariance dimensions must agree");
        }
        if mean.iter().any(|v| !v.is_finite()) || cov.iter().any(|v| !v.is_finite()) {
            return invalid("Gaussian parameters must be finite");
        }
        let sym = symmetrize(&cov);
        let chol = Cholesky::new(sym.clone()).ok_or_else(|| {
            crate::Error::Validation("covariance must be positive definite".into())
        })?;
        let logdet = 2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|v| v.ln())
                .sum::<f64>();
        Ok(MvNormal {
            mean,
            cov: sym,
            chol,
            logdet,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn logpdf(&self, y: &DVector<f64>) -> f64 {
        let diff = y - &self.mean;
        let solved = self.chol.solve(&diff);
        -0.5 * (self.dim() as f64 * (2.0 * std::f64::consts::PI).ln()
            + self.logdet
            + diff.dot(&solved))
    }

    pub fn pdf(&self, y: &DVector<f64>) -> f64 {
        self.logpdf(y).exp()
    }

    pub fn sample(&self, rng: &mut rng::Rng) -> DVector<f64> {
        let iid = DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );
        &self.mean + self.chol.l() * iid
    }

    /// Distribution of `A y + b` — affine images of Gaussians are Gaussian.
    pub fn affine_image(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<MvNormal> {
        if a.ncols() != self.dim() || b.len() != a.nrows() {
            return invalid("affine map dimensions do not match the Gaussian");
        }
        MvNormal::new(a * &self.mean + b, a * &self.cov * a.transpose())
    }

    /// Closed-form selection mass `P(c'y ≥ threshold)`.
    pub fn linear_index_upper_mass(&self, coeffs: &DVector<f64>, threshold: f64) -> Result<f64> {
        if coeffs.len() != self.dim() {
            return invalid("index coefficients must match the Gaussian dimension");
        }
        let sd = (coeffs.dot(&(&self.cov * coeffs))).sqrt();
        if sd <= 0.0 || sd.is_nan() {
            return invalid("linear index has zero variance under the base density");
        }
        Ok(1.0 - norm_cdf((threshold - coeffs.dot(&self.mean)) / sd))
    }
}

/// Base density for selection truncation.
pub enum DensityKind {
    Gaussian(MvNormal),
    /// Scalar exponential-polynomial base (selection mass via its CDF).
    Scalar(ExpFamDensity),
}

impl DensityKind {
    fn dim(&self) -> usize {
        match self {
            DensityKind::Gaussian(g) => g.dim(),
            DensityKind::Scalar(_) => 1,
        }
    }

    fn pdf(&self, y: &DVector<f64>) -> f64 {
        match self {
            DensityKind::Gaussian(g) => g.pdf(y),
            DensityKind::Scalar(d) => d.density_at(y[0]),
        }
    }
}

/// Membership test for [`SelectionRule::Predicate`].
pub type SelectionPredicate = Box<dyn Fn(&DVector<f64>) -> bool + Send + Sync>;

/// How observed units are selected from the base population.
pub enum SelectionRule {
    /// Keep `y` with `c'y ≥ threshold`.
    LinearIndex {
        coeffs: DVector<f64>,
        threshold: f64,
    },
    /// Arbitrary predicate; requires the caller to supply the selection
    /// mass because no general quadrature is attempted.
    Predicate(SelectionPredicate),
}

/// Normalized density of observed (selected) units.
pub struct TruncatedDensity {
    base: DensityKind,
    rule: SelectionRule,
    mass: f64,
}

impl std::fmt::Debug for TruncatedDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TruncatedDensity")
            .field("dim", &self.base.dim())
            .field("mass", &self.mass)
            .finish()
    }
}

/// Build the truncated density. The selection mass is computed in closed
/// form for Gaussian bases with linear-index rules, from the CDF table for
/// scalar exponential-polynomial bases, and must be supplied via
/// `mass_override` for predicate rules. A mass this close to zero means
/// essentially no unit is ever observed, which is rejected.
pub fn truncated_density(
    base: DensityKind,
    rule: SelectionRule,
    mass_override: Option<f64>,
) -> Result<TruncatedDensity> {
    let mass = match (&rule, mass_override) {
        (_, Some(m)) => m,
        (SelectionRule::LinearIndex { coeffs, threshold }, None) => {
            if coeffs.len() != base.dim() {
                return invalid("index coefficients must match the base dimension");
            }
            match &base {
                DensityKind::Gaussian(g) => g.linear_index_upper_mass(coeffs, *threshold)?,
                DensityKind::Scalar(d) => {
                    let c = coeffs[0];
                    if c == 0.0 {
                        return invalid("scalar selection index must have a nonzero coefficient");
                    }
                    let cut = threshold / c;
                    if c > 0.0 {
                        1.0 - d.cdf_at(cut)
                    } else {
                        d.cdf_at(cut)
                    }
                }
            }
        }
        (SelectionRule::Predicate(_), None) => {
            return invalid("predicate selection rules need an explicit selection mass");
        }
    };
    if !(mass.is_finite() && mass > 1e-300 && mass <= 1.0 + 1e-12) {
        return invalid(format!("selection mass {mass} outside (0, 1]"));
    }
    Ok(TruncatedDensity {
        base,
        rule,
        mass: mass.min(1.0),
    })
}

impl TruncatedDensity {
    pub fn mass(&self) -> f64 {
        self.mass
    }

    fn selected(&self, y: &DVector<f64>) -> bool {
        match &self.rule {
            SelectionRule::LinearIndex { coeffs, threshold } => coeffs.dot(y) >= *threshold,
            SelectionRule::Predicate(keep) => keep(y),
        }
    }

    /// `base(y) / mass` on the selected set, zero elsewhere.
    pub fn pdf(&self, y: &DVector<f64>) -> f64 {
        if y.len() != self.base.dim() {
            return 0.0;
        }
        if self.selected(y) {
            self.base.pdf(y) / self.mass
        } else {
            0.0
        }
    }

    pub fn logpdf(&self, y: &DVector<f64>) -> f64 {
        self.pdf(y).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::fit_coefficients;
    use crate::quad::{QuadRule, QuadSpec};

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn base_gaussian() -> MvNormal {
        MvNormal::new(
            DVector::from_row_slice(&[0.4, 1.1]),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, 0.9]),
        )
        .unwrap()
    }

    #[test]
    fn mvn_logpdf_matches_hand_computation() {
        // Independent components: logpdf is the sum of scalar normals.
        let g = MvNormal::new(
            DVector::from_row_slice(&[1.0, -2.0]),
            DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 0.25]),
        )
        .unwrap();
        let y = DVector::from_row_slice(&[2.0, -1.0]);
        let expected = crate::stats::norm_logpdf(0.5) - 2.0f64.ln()
            + crate::stats::norm_logpdf(2.0)
            - 0.5f64.ln();
        assert_close(g.logpdf(&y), expected, 1e-12);
    }

    #[test]
    fn affine_image_moments() {
        let g = base_gaussian();
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]);
        let b = DVector::from_row_slice(&[-1.0, 0.5]);
        let img = g.affine_image(&a, &b).unwrap();
        assert_close(img.mean()[0], 2.0 * 0.4 + 1.1 - 1.0, 1e-12);
        // Var(2y₁ + y₂) = 4·0.5 + 4·0.2 + 0.9.
        assert_close(img.cov()[(0, 0)], 3.7, 1e-12);
    }

    #[test]
    fn firm_style_selection_mass_is_closed_form_normal_cdf() {
        // Observable log employment n = (log ν + ζ − log w + ε + α k)/(1−ν)
        // from a bivariate Gaussian (ε, k); observed when n ≥ n̄. The map
        // to y = (n, k) is affine, so the selection mass must equal
        // 1 − Φ((n̄ − μ_n)/σ_n) computed from the index distribution.
        let (alpha, nu, zeta, log_w, n_bar): (f64, f64, f64, f64, f64) =
            (0.3, 0.6, 0.05, 0.02, 0.8);
        let eps_k = MvNormal::new(
            DVector::from_row_slice(&[0.1, 1.4]),
            DMatrix::from_row_slice(2, 2, &[0.9, 0.15, 0.15, 0.5]),
        )
        .unwrap();
        let slope = 1.0 / (1.0 - nu);
        let intercept = (nu.ln() + zeta - log_w) * slope;
        let map = DMatrix::from_row_slice(2, 2, &[slope, alpha * slope, 0.0, 1.0]);
        let obs = eps_k
            .affine_image(&map, &DVector::from_row_slice(&[intercept, 0.0]))
            .unwrap();
        let trunc = truncated_density(
            DensityKind::Gaussian(obs.clone()),
            SelectionRule::LinearIndex {
                coeffs: DVector::from_row_slice(&[1.0, 0.0]),
                threshold: n_bar,
            },
            None,
        )
        .unwrap();
        // Oracle: standardize the scalar index by hand.
        let mu_n = obs.mean()[0];
        let sd_n = obs.cov()[(0, 0)].sqrt();
        let oracle = 1.0 - norm_cdf((n_bar - mu_n) / sd_n);
        assert_close(trunc.mass(), oracle, 1e-10);

        // Density: zero below the threshold, base/mass above it.
        let below = DVector::from_row_slice(&[n_bar - 0.01, 1.0]);
        let above = DVector::from_row_slice(&[n_bar + 0.4, 1.0]);
        assert_eq!(trunc.pdf(&below), 0.0);
        assert_close(trunc.pdf(&above), obs.pdf(&above) / oracle, 1e-12);
    }

    #[test]
    fn monte_carlo_retained_fraction_matches_mass() {
        let obs = base_gaussian();
        let coeffs = DVector::from_row_slice(&[1.0, -0.5]);
        let threshold = 0.2;
        let trunc = truncated_density(
            DensityKind::Gaussian(obs.clone()),
            SelectionRule::LinearIndex {
                coeffs: coeffs.clone(),
                threshold,
            },
            None,
        )
        .unwrap();
        let mut rng = crate::rng::root(314);
        let n = 1_000_000;
        let kept = (0..n)
            .filter(|_| coeffs.dot(&obs.sample(&mut rng)) >= threshold)
            .count();
        let frac = kept as f64 / n as f64;
        let se = (trunc.mass() * (1.0 - trunc.mass()) / n as f64).sqrt();
        assert!(
            (frac - trunc.mass()).abs() <= 4.0 * se,
            "retained fraction {frac} vs mass {} (se {se})",
            trunc.mass()
        );
    }

    #[test]
    fn truncated_density_integrates_to_one() {
        let trunc = truncated_density(
            DensityKind::Gaussian(base_gaussian()),
            SelectionRule::LinearIndex {
                coeffs: DVector::from_row_slice(&[1.0, 0.0]),
                threshold: 0.7,
            },
            None,
        )
        .unwrap();
        // 2-D tensor quadrature over the selected set itself: starting
        // the y₁ range at the threshold keeps the integrand smooth (the
        // density jumps to zero across y₁ = 0.7).
        let rx = QuadRule::gauss_legendre(160, 0.7, 6.0).unwrap();
        let ry = QuadRule::gauss_legendre(160, -6.0, 8.0).unwrap();
        let total =
            rx.integrate(|a| ry.integrate(|b| trunc.pdf(&DVector::from_row_slice(&[a, b]))));
        assert_close(total, 1.0, 1e-6);
    }

    #[test]
    fn scalar_base_uses_cdf_for_mass() {
        let d = fit_coefficients(0.0, &[1.0], (-10.0, 10.0), QuadSpec::default()).unwrap();
        let trunc = truncated_density(
            DensityKind::Scalar(d.clone()),
            SelectionRule::LinearIndex {
                coeffs: DVector::from_row_slice(&[1.0]),
                threshold: 0.5,
            },
            None,
        )
        .unwrap();
        assert_close(trunc.mass(), 1.0 - d.cdf_at(0.5), 1e-12);
        assert_close(trunc.mass(), 1.0 - norm_cdf(0.5), 1e-5);
    }

    #[test]
    fn predicate_rules_require_mass() {
        let even = SelectionRule::Predicate(Box::new(|y: &DVector<f64>| y[0] >= 0.0));
        assert!(truncated_density(DensityKind::Gaussian(base_gaussian()), even, None).is_err());
        let with_mass = truncated_density(
            DensityKind::Gaussian(base_gaussian()),
            SelectionRule::Predicate(Box::new(|y: &DVector<f64>| y[0] >= 0.0)),
            Some(0.7),
        )
        .unwrap();
        assert_close(with_mass.mass(), 0.7, 1e-15);
        // Empty selection sets are rejected.
        assert!(truncated_density(
            DensityKind::Gaussian(base_gaussian()),
            SelectionRule::Predicate(Box::new(|_| false)),
            Some(0.0),
        )
        .is_err());
    }
}
