//! Household income density.
//!
//! Given employment state `ε`, income is `ι = λ (ξ_ε + (1 + r) a)` with
//! `λ ~ lognormal(μ_λ, −2μ_λ)` independent of assets `a`. Conditioning on
//! assets and integrating over the mixture gives
//!
//! `p(ι | ε) = π_ε f(ι/ξ_ε)/ξ_ε
//!            + (1 − π_ε) ∫ f(ι/(ξ_ε + (1+r)a)) / (ξ_ε + (1+r)a) g_ε(a) da`,
//!
//! where `f` is the lognormal density of `λ` and `g_ε` the continuous
//! asset component. Likelihood evaluation hits this integral once per
//! `(unit, period, smoother draw)`, so [`IncomeDensityTable`] precomputes
//! it on an equal-spaced grid in `log ι` and interpolates with a cubic
//! spline; observations outside the tabulated range fall back to direct
//! quadrature.

use crate::error::{invalid, Result};
use crate::interp::UniformSpline;
use crate::quad::{QuadRule, QuadSpec};
use crate::stats::lognormal_logpdf;

use super::HouseholdMicroParams;

/// Default node count for the `log ι` interpolation grid.
pub const INCOME_GRID_NODES: usize = 200;

/// Labor income `ξ_ε = w [(1 − τ) ε + b (1 − ε)]`.
pub fn labor_income(p: &HouseholdMicroParams, eps: usize) -> Result<f64> {
    if eps > 1 {
        return invalid(format!("employment state must be 0 or 1, got {eps}"));
    }
    Ok(if eps == 1 {
        p.wage() * (1.0 - p.tax())
    } else {
        p.wage() * p.replacement()
    })
}

/// Shared quadrature state for repeated income-density evaluations at one
/// `(params, ε)`: asset-node constants and pre-weighted continuous density
/// values.
struct IncomeIntegrator {
    xi: f64,
    mu: f64,
    sigma: f64,
    point_mass: f64,
    /// Cash-on-hand `ξ + (1 + r) a_k` at each asset quadrature node.
    cash: Vec<f64>,
    /// `w_k · (1 − π) · g(a_k)` at each node.
    weighted_density: Vec<f64>,
}

impl IncomeIntegrator {
    fn new(p: &HouseholdMicroParams, eps: usize, quad: QuadSpec) -> Result<IncomeIntegrator> {
        let xi = labor_income(p, eps)?;
        let mix = p.asset_dist(eps);
        let cont = mix.continuous();
        let (lo, hi) = cont.support();
        let rule = QuadRule::gauss_legendre(quad.nodes, lo, hi)?;
        let gross = 1.0 + p.rate();
        let cash: Vec<f64> = rule.nodes.iter().map(|&a| xi + gross * a).collect();
        if cash.iter().any(|&c| c <= 0.0) {
            return invalid("cash on hand must stay positive over the asset support");
        }
        let scale = 1.0 - mix.point_mass();
        let weighted_density = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&a, &w)| w * scale * cont.density_at(a))
            .collect();
        Ok(IncomeIntegrator {
            xi,
            mu: p.mu_lambda(),
            sigma: p.sigma_lambda(),
            point_mass: mix.point_mass(),
            cash,
            weighted_density,
        })
    }

    fn density(&self, iota: f64) -> f64 {
        if iota <= 0.0 {
            return 0.0;
        }
        let at = |c: f64| lognormal_logpdf(iota / c, self.mu, self.sigma).exp() / c;
        let mut total = self.point_mass * at(self.xi);
        for (c, wg) in self.cash.iter().zip(&self.weighted_density) {
            total += wg * at(*c);
        }
        total
    }
}

/// Income density `p(ι | ε, z, θ)` by direct quadrature over the asset
/// distribution.
pub fn income_density(
    p: &HouseholdMicroParams,
    eps: usize,
    iota: f64,
    quad: QuadSpec,
) -> Result<f64> {
    if !(iota.is_finite() && iota > 0.0) {
        return invalid(format!("income must be positive and finite, got {iota}"));
    }
    Ok(IncomeIntegrator::new(p, eps, quad)?.density(iota))
}

/// Cubic-spline table of the income density on an equal-spaced `log ι`
/// grid, with direct quadrature outside the tabulated range.
pub struct IncomeDensityTable {
    spline: UniformSpline,
    integrator: IncomeIntegrator,
}

impl IncomeDensityTable {
    /// Tabulate the density for incomes spanning `iota_range` (typically
    /// the observed min/max for the period), padded by 5% in log units so
    /// the data range sits in the spline interior.
    pub fn build(
        p: &HouseholdMicroParams,
        eps: usize,
        iota_range: (f64, f64),
        n_nodes: usize,
        quad: QuadSpec,
    ) -> Result<IncomeDensityTable> {
        let (min_i, max_i) = iota_range;
        if !(min_i.is_finite() && max_i.is_finite()) || min_i <= 0.0 || max_i < min_i {
            return invalid(format!("invalid income range [{min_i}, {max_i}]"));
        }
        if n_nodes < 8 {
            return invalid("income grid needs at least 8 nodes");
        }
        let integrator = IncomeIntegrator::new(p, eps, quad)?;
        let mut lo = min_i.ln();
        let mut hi = max_i.ln();
        let pad = 0.05 * (hi - lo).max(0.2);
        lo -= pad;
        hi += pad;
        let step = (hi - lo) / (n_nodes - 1) as f64;
        let values: Vec<f64> = (0..n_nodes)
            .map(|k| integrator.density((lo + step * k as f64).exp()))
            .collect();
        let spline = UniformSpline::fit(lo, step, values)?;
        Ok(IncomeDensityTable { spline, integrator })
    }

    /// Interpolated density at `iota` (exact quadrature outside the grid).
    pub fn density(&self, iota: f64) -> f64 {
        if iota <= 0.0 || !iota.is_finite() {
            return 0.0;
        }
        let s = iota.ln();
        if self.spline.covers(s) {
            self.spline.eval(s).max(0.0)
        } else {
            self.integrator.density(iota)
        }
    }

    pub fn log_density(&self, iota: f64) -> f64 {
        self.density(iota).ln()
    }
}
