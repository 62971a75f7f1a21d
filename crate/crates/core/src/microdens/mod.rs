//! Micro-level sampling densities `p(y_{i,t} | z_t, θ)` and cross-section
//! utilities.
//!
//! The household income density treats observed income as
//! `ι = λ · (ξ_ε + (1 + r) a)` with a permanent multiplicative shock
//! `λ ~ lognormal(μ_λ, −2μ_λ)` (so `E λ = 1`), employment-dependent labor
//! income `ξ_ε = w[(1−τ)ε + b(1−ε)]`, and assets `a` drawn from a
//! point-mass-at-zero / exponential-polynomial mixture whose parameters
//! ride on the aggregate state. Because `λ` has a smooth density, the
//! asset point mass is smoothed out and the income density exists even
//! where the asset distribution has an atom.
//!
//! Also here: selection-truncated densities (units observed only when a
//! linear index clears a threshold), two-period panel densities obtained
//! by inverting `(λ, a) ↦ (ι_{t−1}, ι_t)`, cross-sectional sufficient
//! statistics, and cross-section simulation.

mod income;
mod panel;
mod simulate;
mod suffstat;
mod truncation;

pub use income::{income_density, labor_income, IncomeDensityTable, INCOME_GRID_NODES};
pub use panel::{panel_two_period_density, PanelDensityEvaluator};
pub use simulate::simulate_cross_section;
pub use suffstat::sufficient_statistics;
pub use truncation::{truncated_density, DensityKind, MvNormal, SelectionRule, TruncatedDensity};

use crate::error::{invalid, Result};
use crate::expfam::ExpFamDensity;

/// Distribution with an atom at zero and an exponential-polynomial
/// continuous component on `(0, hi]`.
#[derive(Debug, Clone)]
pub struct MixtureAtZero {
    point_mass: f64,
    continuous: ExpFamDensity,
}

impl MixtureAtZero {
    pub fn new(point_mass: f64, continuous: ExpFamDensity) -> Result<MixtureAtZero> {
        if !(0.0..=1.0).contains(&point_mass) || !point_mass.is_finite() {
            return invalid(format!("point mass {point_mass} outside [0, 1]"));
        }
        if continuous.support().0 < 0.0 {
            return invalid("continuous asset component must live on nonnegative support");
        }
        Ok(MixtureAtZero {
            point_mass,
            continuous,
        })
    }

    pub fn point_mass(&self) -> f64 {
        self.point_mass
    }

    pub fn continuous(&self) -> &ExpFamDensity {
        &self.continuous
    }

    /// Raw moments `E[a^k]`, `k = 1..=upto`, including the atom at zero.
    pub fn raw_moments(&self, upto: usize) -> Result<Vec<f64>> {
        let (lo, hi) = self.continuous.support();
        let rule = crate::quad::QuadRule::gauss_legendre(self.continuous_quad_nodes(), lo, hi)?;
        Ok((1..=upto)
            .map(|k| {
                (1.0 - self.point_mass)
                    * rule.integrate(|a| a.powi(k as i32) * self.continuous.density_at(a))
            })
            .collect())
    }

    fn continuous_quad_nodes(&self) -> usize {
        200
    }
}

/// Employment Markov chain with hazards `p01 = P(0 → 1)` and
/// `p10 = P(1 → 0)`.
#[derive(Debug, Clone, Copy)]
pub struct EmploymentMarkov {
    p01: f64,
    p10: f64,
}

impl EmploymentMarkov {
    pub fn new(p01: f64, p10: f64) -> Result<EmploymentMarkov> {
        for (name, p) in [("p01", p01), ("p10", p10)] {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return invalid(format!(
                    "transition probability {name} = {p} outside [0, 1]"
                ));
            }
        }
        if p01 + p10 <= 0.0 {
            return invalid("employment chain must move (p01 + p10 > 0)");
        }
        Ok(EmploymentMarkov { p01, p10 })
    }

    pub fn p01(&self) -> f64 {
        self.p01
    }

    pub fn p10(&self) -> f64 {
        self.p10
    }

    /// Stationary employment rate `L = p01 / (p01 + p10)`.
    pub fn stationary_employment(&self) -> f64 {
        self.p01 / (self.p01 + self.p10)
    }

    /// Stationary probability of state `eps`.
    pub fn stationary(&self, eps: usize) -> f64 {
        let l = self.stationary_employment();
        if eps == 1 {
            l
        } else {
            1.0 - l
        }
    }

    /// One-step transition probability `P(ε_t = to | ε_{t−1} = from)`.
    pub fn transition(&self, from: usize, to: usize) -> f64 {
        match (from, to) {
            (0, 1) => self.p01,
            (0, 0) => 1.0 - self.p01,
            (1, 0) => self.p10,
            (1, 1) => 1.0 - self.p10,
            _ => 0.0,
        }
    }
}

/// Everything the income density needs at one `(θ, z_t)`: prices, fiscal
/// parameters, the permanent-shock scale, and the asset distribution per
/// employment state.
#[derive(Debug, Clone)]
pub struct HouseholdMicroParams {
    wage: f64,
    rate: f64,
    tax: f64,
    replacement: f64,
    mu_lambda: f64,
    asset_dist: [MixtureAtZero; 2],
    employment: f64,
}

impl HouseholdMicroParams {
    /// `asset_dist[0]` is the unemployed distribution, `asset_dist[1]` the
    /// employed one. Requires `mu_lambda < 0` (the implied lognormal
    /// variance is `σ_λ² = −2 μ_λ`), positive labor income in both
    /// employment states, and `r > −1`.
    pub fn new(
        wage: f64,
        rate: f64,
        tax: f64,
        replacement: f64,
        mu_lambda: f64,
        asset_dist: [MixtureAtZero; 2],
        employment: f64,
    ) -> Result<HouseholdMicroParams> {
        for (name, v) in [
            ("wage", wage),
            ("rate", rate),
            ("tax", tax),
            ("replacement", replacement),
            ("mu_lambda", mu_lambda),
            ("employment", employment),
        ] {
            if !v.is_finite() {
                return invalid(format!("{name} must be finite, got {v}"));
            }
        }
        if wage <= 0.0 {
            return invalid(format!("wage must be positive, got {wage}"));
        }
        if rate <= -1.0 {
            return invalid(format!("interest rate must exceed −1, got {rate}"));
        }
        if !(0.0..1.0).contains(&tax) {
            return invalid(format!("tax rate {tax} outside [0, 1)"));
        }
        if mu_lambda >= 0.0 {
            return invalid(format!(
                "mu_lambda must be negative so the permanent shock has positive variance, got {mu_lambda}"
            ));
        }
        if !(0.0 < employment && employment < 1.0) {
            return invalid(format!("employment rate {employment} outside (0, 1)"));
        }
        let p = HouseholdMicroParams {
            wage,
            rate,
            tax,
            replacement,
            mu_lambda,
            asset_dist,
            employment,
        };
        for eps in 0..2 {
            let xi = labor_income(&p, eps)?;
            if xi <= 0.0 {
                return invalid(format!(
                    "labor income for employment state {eps} must be positive, got {xi}"
                ));
            }
        }
        Ok(p)
    }

    pub fn wage(&self) -> f64 {
        self.wage
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn tax(&self) -> f64 {
        self.tax
    }

    pub fn replacement(&self) -> f64 {
        self.replacement
    }

    pub fn mu_lambda(&self) -> f64 {
        self.mu_lambda
    }

    /// Lognormal log-scale `σ_λ = √(−2 μ_λ)`, chosen so `E λ = 1`.
    pub fn sigma_lambda(&self) -> f64 {
        (-2.0 * self.mu_lambda).sqrt()
    }

    pub fn asset_dist(&self, eps: usize) -> &MixtureAtZero {
        &self.asset_dist[eps.min(1)]
    }

    pub fn employment(&self) -> f64 {
        self.employment
    }
}

/// One micro observation: a unit id, the observed vector `y`, and (for
/// panel data) the previous-period observation.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroRecord {
    pub id: u64,
    pub y: Vec<f64>,
    pub prev: Option<(usize, Vec<f64>)>,
}

impl MicroRecord {
    pub fn new(id: u64, y: Vec<f64>) -> MicroRecord {
        MicroRecord { id, y, prev: None }
    }
}

/// All records observed in one period.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroBlock {
    pub t: usize,
    pub records: Vec<MicroRecord>,
}

/// Repeated cross sections, sorted by `(t, id)`. Periods use the data
/// convention `t = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroDataset {
    blocks: Vec<MicroBlock>,
    y_len: usize,
}

impl MicroDataset {
    /// Sorts blocks by `t` and records by id, and validates: distinct
    /// periods, positive `t`, distinct ids within a period, uniform
    /// observation length, finite values.
    pub fn new(mut blocks: Vec<MicroBlock>) -> Result<MicroDataset> {
        if blocks.is_empty() {
            return invalid("micro dataset needs at least one period block");
        }
        blocks.sort_by_key(|b| b.t);
        if blocks.windows(2).any(|w| w[0].t == w[1].t) {
            return invalid("micro dataset has duplicate period blocks");
        }
        if blocks[0].t == 0 {
            return invalid("micro periods are 1-based");
        }
        let y_len = blocks
            .first()
            .and_then(|b| b.records.first())
            .map(|r| r.y.len())
            .unwrap_or(0);
        if y_len == 0 {
            return invalid("micro records must carry at least one observable");
        }
        for block in blocks.iter_mut() {
            if block.records.is_empty() {
                return invalid(format!("period {} has no records", block.t));
            }
            block.records.sort_by_key(|r| r.id);
            if block.records.windows(2).any(|w| w[0].id == w[1].id) {
                return invalid(format!("period {} has duplicate unit ids", block.t));
            }
            for rec in &block.records {
                if rec.y.len() != y_len {
                    return invalid(format!(
                        "unit {} at t={} has {} observables, expected {y_len}",
                        rec.id,
                        block.t,
                        rec.y.len()
                    ));
                }
                if rec.y.iter().any(|v| !v.is_finite()) {
                    return invalid(format!(
                        "unit {} at t={} has non-finite data",
                        rec.id, block.t
                    ));
                }
                if let Some((tp, yp)) = &rec.prev {
                    if *tp >= block.t {
                        return invalid(format!(
                            "unit {} at t={}: previous period {tp} is not earlier",
                            rec.id, block.t
                        ));
                    }
                    if yp.iter().any(|v| !v.is_finite()) {
                        return invalid(format!(
                            "unit {} at t={} has non-finite previous-period data",
                            rec.id, block.t
                        ));
                    }
                }
            }
        }
        Ok(MicroDataset { blocks, y_len })
    }

    pub fn blocks(&self) -> &[MicroBlock] {
        &self.blocks
    }

    /// Length of each observation vector.
    pub fn y_len(&self) -> usize {
        self.y_len
    }

    /// Observation periods, ascending.
    pub fn times(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.t).collect()
    }

    /// Total number of records across periods.
    pub fn n_records(&self) -> usize {
        self.blocks.iter().map(|b| b.records.len()).sum()
    }

    /// Largest observation period.
    pub fn max_time(&self) -> usize {
        self.blocks.last().map(|b| b.t).unwrap_or(0)
    }
}
