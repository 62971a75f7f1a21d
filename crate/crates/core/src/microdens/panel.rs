//! Two-period panel density of household income.
//!
//! A unit carries a permanent multiplicative factor `λ` across periods,
//! so observing the income pair `(ι_{t-1}, ι_t)` ties down both `λ` and
//! beginning-of-period assets `a`:
//!
//! ```text
//! ι_{t-1} = λ·u(a),  u(a) = ξ_prev + (1 + r_prev)·a,
//! ι_t     = λ·v(a),  v(a) = ξ_curr + (1 + r_curr)·s_ε(a),
//! ```
//!
//! with `s_ε` the savings policy for the previous employment state. The
//! factor cancels from the ratio, so the roots of `v(a)/u(a) = ι_t/ι_{t-1}`
//! recover the admissible asset levels, and each root contributes through
//! the change of variables `(λ, a) → (ι_{t-1}, ι_t)` with Jacobian
//! `|λ|·|u v' − u' v|`. Only the continuous part of the asset mixture
//! produces a two-dimensional density; the point mass at zero assets
//! concentrates on a one-dimensional ray and carries no planar density.

use crate::error::{invalid, Result};
use crate::microdens::{labor_income, EmploymentMarkov, HouseholdMicroParams};
use crate::models::SavingsPolicy;
use crate::stats::lognormal_logpdf;

/// Number of scan intervals used to bracket ratio roots.
const DEFAULT_SCAN: usize = 400;
/// Relative tolerance for declaring the ratio constant (degenerate map).
const DEGENERATE_TOL: f64 = 1e-12;

/// Evaluator for the joint density of `(ε_{t-1}, ε_t, ι_{t-1}, ι_t)` at
/// one employment pair, with the ratio scan precomputed so repeated
/// income pairs are cheap.
#[derive(Debug, Clone)]
pub struct PanelDensityEvaluator {
    prev: HouseholdMicroParams,
    policy: SavingsPolicy,
    eps_prev: usize,
    xi_prev: f64,
    xi_curr: f64,
    gross_prev: f64,
    gross_curr: f64,
    scan_a: Vec<f64>,
    scan_r: Vec<f64>,
    pair_prob: f64,
}

impl PanelDensityEvaluator {
    /// `prev`/`curr` hold the period-specific prices (wage, rate, tax,
    /// replacement); the asset distribution is read from `prev` and the
    /// employment pair is weighted by `chain` (stationary at `t−1`, one
    /// transition to `t`). The measurement factor is permanent, so both
    /// parameter sets must agree on it, and the savings policy must be
    /// strictly increasing for the ratio-root inversion to be valid.
    pub fn new(
        chain: EmploymentMarkov,
        prev: &HouseholdMicroParams,
        curr: &HouseholdMicroParams,
        policy: &SavingsPolicy,
        eps_prev: usize,
        eps_curr: usize,
        n_scan: usize,
    ) -> Result<PanelDensityEvaluator> {
        if eps_prev > 1 || eps_curr > 1 {
            return invalid("employment states are 0 (unemployed) or 1 (employed)");
        }
        if n_scan < 8 {
            return invalid("ratio scan needs at least 8 intervals");
        }
        if prev.mu_lambda() != curr.mu_lambda() {
            return invalid("the permanent factor distribution must match across periods");
        }
        if !policy.is_strictly_increasing() {
            return invalid("savings policy must be strictly increasing in assets");
        }
        let xi_prev = labor_income(prev, eps_prev)?;
        let xi_curr = labor_income(curr, eps_curr)?;
        let (gross_prev, gross_curr) = (1.0 + prev.rate(), 1.0 + curr.rate());
        let (lo, hi) = prev.asset_dist(eps_prev).continuous().support();
        let step = (hi - lo) / n_scan as f64;
        let mut scan_a = Vec::with_capacity(n_scan + 1);
        let mut scan_r = Vec::with_capacity(n_scan + 1);
        for k in 0..=n_scan {
            let a = if k == n_scan {
                hi
            } else {
                lo + step * k as f64
            };
            let u = xi_prev + gross_prev * a;
            let v = xi_curr + gross_curr * policy.value(eps_prev, a);
            if !(u > 0.0 && v > 0.0) {
                return invalid("cash on hand must stay positive over the asset support");
            }
            scan_a.push(a);
            scan_r.push(v / u);
        }
        Ok(PanelDensityEvaluator {
            prev: prev.clone(),
            policy: policy.clone(),
            eps_prev,
            xi_prev,
            xi_curr,
            gross_prev,
            gross_curr,
            scan_a,
            scan_r,
            pair_prob: chain.stationary(eps_prev) * chain.transition(eps_prev, eps_curr),
        })
    }

    /// Range of the income ratio `ι_t/ι_{t-1}` reachable over the asset
    /// support — the density is zero outside `[min, max]·ι_{t-1}`.
    pub fn ratio_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &r in &self.scan_r {
            lo = lo.min(r);
            hi = hi.max(r);
        }
        (lo, hi)
    }

    fn ratio_at(&self, a: f64) -> f64 {
        let u = self.xi_prev + self.gross_prev * a;
        let v = self.xi_curr + self.gross_curr * self.policy.value(self.eps_prev, a);
        v / u
    }

    /// All roots of `v(a)/u(a) = rho` in the asset support, or `None`
    /// when the ratio is constant and equal to `rho` (degenerate map:
    /// the income pair sits on a singular ray).
    fn ratio_roots(&self, rho: f64) -> Option<Vec<f64>> {
        let tol = DEGENERATE_TOL * (1.0 + rho.abs());
        if self.scan_r.iter().all(|&r| (r - rho).abs() <= tol) {
            return None;
        }
        let mut roots = Vec::new();
        let span = self.scan_a[self.scan_a.len() - 1] - self.scan_a[0];
        for k in 0..self.scan_a.len() - 1 {
            let f0 = self.scan_r[k] - rho;
            let f1 = self.scan_r[k + 1] - rho;
            if f0 == 0.0 {
                roots.push(self.scan_a[k]);
            } else if f0 * f1 < 0.0 {
                let (mut a0, mut a1) = (self.scan_a[k], self.scan_a[k + 1]);
                let neg_at_a0 = f0 < 0.0;
                for _ in 0..200 {
                    if a1 - a0 <= 1e-15 * span {
                        break;
                    }
                    let mid = 0.5 * (a0 + a1);
                    let fm = self.ratio_at(mid) - rho;
                    if fm == 0.0 {
                        a0 = mid;
                        a1 = mid;
                    } else if (fm < 0.0) == neg_at_a0 {
                        a0 = mid;
                    } else {
                        a1 = mid;
                    }
                }
                roots.push(0.5 * (a0 + a1));
            }
        }
        let last = *self.scan_r.last().unwrap() - rho;
        if last == 0.0 {
            roots.push(*self.scan_a.last().unwrap());
        }
        roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * span);
        Some(roots)
    }

    /// Density of `(ι_{t-1}, ι_t)` given the employment pair, continuous
    /// asset branch only — it integrates to one minus the point mass at
    /// zero assets. Returns `f64::INFINITY` on the singular ray of a
    /// degenerate (constant-ratio) map.
    pub fn income_pair_density(&self, iota_prev: f64, iota_curr: f64) -> Result<f64> {
        if !(iota_prev.is_finite() && iota_prev > 0.0)
            || !(iota_curr.is_finite() && iota_curr > 0.0)
        {
            return invalid("income observations must be positive and finite");
        }
        let mix = self.prev.asset_dist(self.eps_prev);
        let rho = iota_curr / iota_prev;
        let roots = match self.ratio_roots(rho) {
            None => return Ok(f64::INFINITY),
            Some(r) => r,
        };
        let mu = self.prev.mu_lambda();
        let sigma = self.prev.sigma_lambda();
        let mut total = 0.0;
        for a in roots {
            let u = self.xi_prev + self.gross_prev * a;
            let v = self.xi_curr + self.gross_curr * self.policy.value(self.eps_prev, a);
            let lambda = iota_prev / u;
            let jac = lambda
                * (u * self.gross_curr * self.policy.derivative(self.eps_prev, a)
                    - self.gross_prev * v)
                    .abs();
            if jac == 0.0 {
                return Ok(f64::INFINITY);
            }
            let f_lambda = lognormal_logpdf(lambda, mu, sigma).exp();
            total += f_lambda * (1.0 - mix.point_mass()) * mix.continuous().density_at(a) / jac;
        }
        Ok(total)
    }

    /// Joint density of the employment pair and the income pair:
    /// stationary probability of `ε_{t-1}` times the transition to `ε_t`
    /// times the income-pair density.
    pub fn density(&self, iota_prev: f64, iota_curr: f64) -> Result<f64> {
        Ok(self.pair_prob * self.income_pair_density(iota_prev, iota_curr)?)
    }
}

/// One-shot evaluation of the joint two-period density; build a
/// [`PanelDensityEvaluator`] instead when scoring many income pairs at
/// the same parameters.
#[allow(clippy::too_many_arguments)] // mirrors the evaluator's constructor plus the income pair
pub fn panel_two_period_density(
    chain: EmploymentMarkov,
    prev: &HouseholdMicroParams,
    curr: &HouseholdMicroParams,
    policy: &SavingsPolicy,
    eps_prev: usize,
    eps_curr: usize,
    iota_prev: f64,
    iota_curr: f64,
) -> Result<f64> {
    PanelDensityEvaluator::new(chain, prev, curr, policy, eps_prev, eps_curr, DEFAULT_SCAN)?
        .density(iota_prev, iota_curr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::fit_coefficients;
    use crate::microdens::{income_density, EmploymentMarkov, MixtureAtZero};
    use crate::quad::{QuadRule, QuadSpec};
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn mixtures(point_mass: f64) -> [MixtureAtZero; 2] {
        let support = (0.0, 6.0);
        let cont_u = fit_coefficients(1.8, &[0.5, 0.1], support, QuadSpec::default()).unwrap();
        let cont_e = fit_coefficients(2.4, &[0.7, -0.05], support, QuadSpec::default()).unwrap();
        [
            MixtureAtZero::new(point_mass, cont_u).unwrap(),
            MixtureAtZero::new(point_mass, cont_e).unwrap(),
        ]
    }

    fn chain() -> EmploymentMarkov {
        EmploymentMarkov::new(0.5, 0.038).unwrap()
    }

    fn params(wage: f64, rate: f64, point_mass: f64) -> HouseholdMicroParams {
        HouseholdMicroParams::new(
            wage,
            rate,
            0.0114,
            0.15,
            -0.25,
            mixtures(point_mass),
            chain().stationary_employment(),
        )
        .unwrap()
    }

    #[test]
    fn identity_policy_concentrates_on_the_diagonal() {
        // Same prices in both periods and a' = a make ι_t = ι_{t-1}
        // exactly: the pair density is singular on the diagonal and zero
        // off it.
        let p = params(2.0, 0.03, 0.1);
        let policy = SavingsPolicy::from_fn(0.0, 6.0, 61, |_, a| a).unwrap();
        let ev = PanelDensityEvaluator::new(chain(), &p, &p, &policy, 1, 1, 400).unwrap();
        assert_eq!(ev.income_pair_density(1.5, 1.9).unwrap(), 0.0);
        assert_eq!(ev.income_pair_density(2.0, 1.1).unwrap(), 0.0);
        assert!(ev.income_pair_density(1.5, 1.5).unwrap().is_infinite());
    }

    #[test]
    fn marginal_over_current_income_recovers_the_income_density() {
        // Integrating the pair density over ι_t must reproduce the
        // single-period income density of ι_{t-1} (zero point mass so the
        // continuous branch is the whole distribution). This pins the
        // Jacobian and root-finding against an independently tested
        // oracle.
        let prev = params(2.0, 0.02, 0.0);
        let curr = params(1.9, 0.04, 0.0);
        let policy = SavingsPolicy::from_fn(0.0, 6.0, 61, |_, a| 0.2 + 2.0 * a).unwrap();
        let ev = PanelDensityEvaluator::new(chain(), &prev, &curr, &policy, 1, 1, 400).unwrap();
        let (rlo, rhi) = ev.ratio_range();
        assert!(
            rlo > 1.0 && rhi < 2.0,
            "test setup: ratio range {rlo}..{rhi}"
        );
        for &iota_prev in &[0.9, 1.5, 2.6] {
            let rule = QuadRule::gauss_legendre(600, rlo * iota_prev, rhi * iota_prev).unwrap();
            let marginal = rule.integrate(|ic| ev.income_pair_density(iota_prev, ic).unwrap());
            let direct = income_density(&prev, 1, iota_prev, QuadSpec::default()).unwrap();
            assert!(
                (marginal - direct).abs() <= 1e-6 * direct.max(1.0),
                "iota_prev={iota_prev}: marginal {marginal} vs income density {direct}"
            );
        }
    }

    #[test]
    fn pair_probabilities_match_simulation() {
        // End-to-end kernel check: the probability the analytic density
        // assigns to a rectangle matches the Monte Carlo frequency of
        // simulated (ι_{t-1}, ι_t) pairs. Integration runs in (ι, ratio)
        // coordinates so the wedge boundary never cuts through the
        // integration domain.
        let prev = params(2.0, 0.02, 0.0);
        let curr = params(1.9, 0.04, 0.0);
        let policy = SavingsPolicy::from_fn(0.0, 6.0, 61, |_, a| 0.2 + 2.0 * a).unwrap();
        let ev = PanelDensityEvaluator::new(chain(), &prev, &curr, &policy, 1, 1, 400).unwrap();
        let (rlo, rhi) = ev.ratio_range();

        let mu = prev.mu_lambda();
        let sigma = prev.sigma_lambda();
        let cont = prev.asset_dist(1).continuous().clone();
        let mut rng = crate::rng::root(5150);
        let n = 200_000;
        let rects = [(1.2, 2.4, 1.8, 3.2), (0.5, 1.2, 0.6, 2.0)];
        let mut hits = [0usize; 2];
        for _ in 0..n {
            let a = cont.sample(&mut rng);
            let lambda = (mu + sigma * rng.sample::<f64, _>(StandardNormal)).exp();
            let ip = lambda * (ev.xi_prev + ev.gross_prev * a);
            let ic = lambda * (ev.xi_curr + ev.gross_curr * policy.value(1, a));
            for (h, &(p0, p1, c0, c1)) in hits.iter_mut().zip(&rects) {
                if ip >= p0 && ip < p1 && ic >= c0 && ic < c1 {
                    *h += 1;
                }
            }
        }

        for (&(p0, p1, c0, c1), &hit) in rects.iter().zip(&hits) {
            let outer = QuadRule::gauss_legendre(240, p0, p1).unwrap();
            let prob = outer.integrate(|ip| {
                let lo = rlo.max(c0 / ip);
                let hi = rhi.min(c1 / ip);
                if hi <= lo {
                    return 0.0;
                }
                let inner = QuadRule::gauss_legendre(160, lo, hi).unwrap();
                inner.integrate(|r| ip * ev.income_pair_density(ip, r * ip).unwrap())
            });
            let frac = hit as f64 / n as f64;
            let se = (frac * (1.0 - frac) / n as f64).sqrt();
            assert!(
                (frac - prob).abs() <= 4.0 * se.max(1e-4),
                "rect ({p0},{p1})x({c0},{c1}): mc {frac} vs quadrature {prob} (se {se})"
            );
        }
    }

    #[test]
    fn point_mass_scales_the_continuous_branch() {
        let with_atom = params(2.0, 0.02, 0.25);
        let without = params(2.0, 0.02, 0.0);
        let curr_atom = params(1.9, 0.04, 0.25);
        let curr_plain = params(1.9, 0.04, 0.0);
        let policy = SavingsPolicy::from_fn(0.0, 6.0, 61, |_, a| 0.2 + 2.0 * a).unwrap();
        let ev_atom =
            PanelDensityEvaluator::new(chain(), &with_atom, &curr_atom, &policy, 0, 1, 400)
                .unwrap();
        let ev_plain =
            PanelDensityEvaluator::new(chain(), &without, &curr_plain, &policy, 0, 1, 400).unwrap();
        // Unemployed previous period: u(a) = 0.3 + 1.02a, so the
        // reachable ratio range is roughly [2.3, 7]; pick a pair inside.
        let da = ev_atom.income_pair_density(1.0, 3.0).unwrap();
        let dp = ev_plain.income_pair_density(1.0, 3.0).unwrap();
        assert!(dp > 0.0);
        assert!((da - 0.75 * dp).abs() <= 1e-12 * dp);
        // Employment-pair weighting: joint = stationary × transition.
        let weight = chain().stationary(0) * chain().transition(0, 1);
        let joint = ev_atom.density(1.0, 3.0).unwrap();
        assert!((joint - weight * da).abs() <= 1e-12 * joint.abs().max(1e-12));
    }

    #[test]
    fn rejects_invalid_inputs() {
        let p = params(2.0, 0.03, 0.1);
        let policy = SavingsPolicy::from_fn(0.0, 6.0, 61, |_, a| a).unwrap();
        let flat = SavingsPolicy::new(vec![0.0, 6.0], [vec![1.0, 1.0], vec![0.0, 6.0]]).unwrap();
        assert!(PanelDensityEvaluator::new(chain(), &p, &p, &flat, 0, 0, 400).is_err());
        assert!(PanelDensityEvaluator::new(chain(), &p, &p, &policy, 2, 0, 400).is_err());
        let other = HouseholdMicroParams::new(
            2.0,
            0.03,
            0.0114,
            0.15,
            -0.3,
            mixtures(0.1),
            chain().stationary_employment(),
        )
        .unwrap();
        assert!(PanelDensityEvaluator::new(chain(), &p, &other, &policy, 1, 1, 400).is_err());
        let ev = PanelDensityEvaluator::new(chain(), &p, &p, &policy, 1, 1, 400).unwrap();
        assert!(ev.income_pair_density(-1.0, 1.0).is_err());
        assert!(ev.income_pair_density(1.0, f64::NAN).is_err());
    }
}
