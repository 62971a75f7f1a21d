//! Stylized heterogeneous-household provider.
//!
//! The state vector is `z = (ζ, l₀, m₀₁, m₀₂, m₀₃, l₁, m₁₁, m₁₂, m₁₃)`:
//! an AR(1) aggregate shock ζ plus, per employment status ε, the
//! cross-sectional asset-distribution parameters — `l_ε` the logit of
//! the point mass at zero assets and `m_{ε1..ε3}` the mean and central
//! moments of the continuous part. The distribution parameters follow a
//! config-supplied stable linear law driven by ζ (a stand-in for an
//! equilibrium linearization, which this crate deliberately does not
//! solve). The macro observable is `x_t = ζ_t + e_t`.
//!
//! Micro: employment is Bernoulli at its stationary rate, assets come
//! from the point-mass/exponential-polynomial mixture implied by the
//! state, income multiplies labor-plus-asset resources by a mean-one
//! lognormal heterogeneity factor `λ` with log-scale `μ_λ`. Records are
//! `y = (ε, ι)`.
//!
//! Prices are closed-form in the calibration: `r̄ = 1/β − 1`,
//! `k = (α/(r̄+δ))^{1/(1−α)}`, `w̄ = (1−α)k^α`, with stand-in unit
//! elasticities `w(ζ) = w̄(1+ζ)` and `r(ζ) = r̄ + (r̄+δ)ζ`; the
//! unemployment-insurance tax balances `τ = b(1−L)/L` at the stationary
//! employment rate `L`.
//!
//! The key identification property is structural: `μ_λ` never enters
//! the state-space matrices (macro data alone cannot move it), while
//! the micro density depends on it directly — asserted bitwise in the
//! tests.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, numeric, Result};
use crate::expfam::fit_coefficients;
use crate::likelihood::{MicroFamily, PeriodDensity};
use crate::microdens::MicroDataset;
use crate::microdens::{
    income_density, simulate_cross_section, EmploymentMarkov, HouseholdMicroParams,
    IncomeDensityTable, MicroBlock, MicroRecord, MixtureAtZero,
};
use crate::momentbased::{moment_vcv, AffineMomentMap, MomentSeries, OBS_ORDER};
use crate::quad::QuadSpec;
use crate::rng;
use crate::statespace::StateSpaceModel;

use super::{check_theta, ModelProvider, MomentInputs};

const N_STATE: usize = 9;
const N_PSI: usize = 8;

/// The household parameters that can be freed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HouseholdParam {
    RhoZeta,
    SigmaZeta,
    SigmaE,
    MuLambda,
}

impl HouseholdParam {
    pub fn from_name(name: &str) -> Result<HouseholdParam> {
        match name {
            "rho_zeta" => Ok(HouseholdParam::RhoZeta),
            "sigma_zeta" => Ok(HouseholdParam::SigmaZeta),
            "sigma_e" => Ok(HouseholdParam::SigmaE),
            "mu_lambda" => Ok(HouseholdParam::MuLambda),
            other => invalid(format!(
                "unknown household parameter {other:?}; expected rho_zeta, sigma_zeta, sigma_e, or mu_lambda"
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HouseholdParam::RhoZeta => "rho_zeta",
            HouseholdParam::SigmaZeta => "sigma_zeta",
            HouseholdParam::SigmaE => "sigma_e",
            HouseholdParam::MuLambda => "mu_lambda",
        }
    }

    fn index(self) -> usize {
        match self {
            HouseholdParam::RhoZeta => 0,
            HouseholdParam::SigmaZeta => 1,
            HouseholdParam::SigmaE => 2,
            HouseholdParam::MuLambda => 3,
        }
    }

    /// Admissible open interval for this parameter.
    fn admissible(self) -> (f64, f64) {
        match self {
            HouseholdParam::RhoZeta => (-1.0, 1.0),
            HouseholdParam::SigmaZeta => (0.0, f64::INFINITY),
            HouseholdParam::SigmaE => (0.0, f64::INFINITY),
            HouseholdParam::MuLambda => (f64::NEG_INFINITY, 0.0),
        }
    }
}

/// Construction inputs for [`StylizedHousehold`] (filled from TOML by
/// the config loader or directly in tests).
#[derive(Debug, Clone)]
pub struct HouseholdSpec {
    pub beta: f64,
    pub alpha: f64,
    pub delta: f64,
    pub replacement: f64,
    pub p01: f64,
    pub p10: f64,
    pub rho_zeta: f64,
    pub sigma_zeta: f64,
    pub sigma_e: f64,
    pub mu_lambda: f64,
    pub asset_support: (f64, f64),
    pub quad_nodes: usize,
    pub density_nodes: usize,
    /// Steady point-mass logits `(l̄₀, l̄₁)`.
    pub steady_logit: [f64; 2],
    /// Steady continuous moments `[m̄₁, m̄₂, m̄₃]` per employment status.
    pub steady_m: [[f64; 3]; 2],
    /// Own persistence of each ψ component, state order
    /// `(l₀, m₀₁, m₀₂, m₀₃, l₁, m₁₁, m₁₂, m₁₃)`.
    pub law_rho: [f64; N_PSI],
    /// Loading of each ψ component on ζ, same order.
    pub law_gamma: [f64; N_PSI],
    /// Free parameters `(name, lower, upper, init)` in θ order.
    pub free: Vec<(String, f64, f64, f64)>,
}

/// Heterogeneous-household model provider; see the module docs.
#[derive(Debug, Clone)]
pub struct StylizedHousehold {
    base: [f64; 4], // (rho_zeta, sigma_zeta, sigma_e, mu_lambda)
    replacement: f64,
    support: (f64, f64),
    quad: QuadSpec,
    density_nodes: usize,
    steady_logit: [f64; 2],
    steady_m: [[f64; 3]; 2],
    law_rho: [f64; N_PSI],
    law_gamma: [f64; N_PSI],
    free: Vec<HouseholdParam>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    init: Vec<f64>,
    // Derived at construction.
    employment: f64,
    tax: f64,
    w_bar: f64,
    r_bar: f64,
    rental: f64,
}

fn validate_values(v: &[f64; 4]) -> Result<()> {
    let [rho_zeta, sigma_zeta, sigma_e, mu_lambda] = *v;
    if !(rho_zeta.is_finite() && rho_zeta.abs() < 1.0) {
        return invalid(format!("|rho_zeta| must be below 1, got {rho_zeta}"));
    }
    if !(sigma_zeta.is_finite() && sigma_zeta >= 0.0) {
        return invalid(format!("sigma_zeta must be nonnegative, got {sigma_zeta}"));
    }
    if !(sigma_e.is_finite() && sigma_e > 0.0) {
        return invalid(format!("sigma_e must be positive, got {sigma_e}"));
    }
    if !(mu_lambda.is_finite() && mu_lambda < 0.0) {
        return invalid(format!(
            "mu_lambda must be negative (its lognormal is mean-one with variance −2·mu_lambda), got {mu_lambda}"
        ));
    }
    Ok(())
}

impl StylizedHousehold {
    pub fn new(spec: HouseholdSpec) -> Result<StylizedHousehold> {
        if !(spec.beta > 0.0 && spec.beta < 1.0) {
            return invalid(format!(
                "discount factor must lie in (0,1), got {}",
                spec.beta
            ));
        }
        if !(spec.alpha > 0.0 && spec.alpha < 1.0) {
            return invalid(format!(
                "capital share must lie in (0,1), got {}",
                spec.alpha
            ));
        }
        if !(spec.delta >= 0.0 && spec.delta <= 1.0) {
            return invalid(format!(
                "depreciation must lie in [0,1], got {}",
                spec.delta
            ));
        }
        if !(spec.replacement > 0.0 && spec.replacement < 1.0) {
            return invalid(format!(
                "replacement rate must lie in (0,1), got {}",
                spec.replacement
            ));
        }
        let chain = EmploymentMarkov::new(spec.p01, spec.p10)?;
        let base = [spec.rho_zeta, spec.sigma_zeta, spec.sigma_e, spec.mu_lambda];
        validate_values(&base)?;
        let (lo, hi) = spec.asset_support;
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
            return invalid(format!("bad asset support [{lo}, {hi}]"));
        }
        if spec.quad_nodes < 16 || spec.density_nodes < 16 {
            return invalid("quadrature and density tables need at least 16 nodes");
        }
        if spec
            .law_rho
            .iter()
            .any(|r| !(r.is_finite() && r.abs() < 1.0))
        {
            return invalid("each distribution-parameter persistence must satisfy |rho| < 1");
        }
        if spec.law_gamma.iter().any(|g| !g.is_finite()) {
            return invalid("distribution-parameter loadings must be finite");
        }

        // Fail fast on an infeasible steady cross section: the steady
        // moments must admit an exponential-polynomial fit.
        let quad = QuadSpec {
            nodes: spec.quad_nodes,
        };
        for (g, m) in spec.steady_m.iter().enumerate() {
            fit_coefficients(m[0], &m[1..], spec.asset_support, quad).map_err(|e| {
                crate::Error::Validation(format!(
                    "steady asset moments for employment status {g} are infeasible: {e}"
                ))
            })?;
            if !spec.steady_logit[g].is_finite() {
                return invalid("steady point-mass logits must be finite");
            }
        }

        let mut free = Vec::new();
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        let mut init = Vec::new();
        for (name, lo_k, up_k, init_k) in &spec.free {
            let param = HouseholdParam::from_name(name)?;
            if free.contains(&param) {
                return invalid(format!("household parameter {name} freed twice"));
            }
            let (adm_lo, adm_hi) = param.admissible();
            if !(lo_k.is_finite() && up_k.is_finite() && lo_k < up_k) {
                return invalid(format!("bad box [{lo_k}, {up_k}] for {name}"));
            }
            if *lo_k <= adm_lo || *up_k >= adm_hi {
                return invalid(format!(
                    "box [{lo_k}, {up_k}] for {name} leaves its admissible interval ({adm_lo}, {adm_hi})"
                ));
            }
            if !(init_k >= lo_k && init_k <= up_k) {
                return invalid(format!("init {init_k} outside box for {name}"));
            }
            free.push(param);
            lower.push(*lo_k);
            upper.push(*up_k);
            init.push(*init_k);
        }

        let employment = chain.stationary_employment();
        let tax = spec.replacement * (1.0 - employment) / employment;
        let r_bar = 1.0 / spec.beta - 1.0;
        let rental = r_bar + spec.delta;
        let k = (spec.alpha / rental).powf(1.0 / (1.0 - spec.alpha));
        let w_bar = (1.0 - spec.alpha) * k.powf(spec.alpha);

        Ok(StylizedHousehold {
            base,
            replacement: spec.replacement,
            support: spec.asset_support,
            quad,
            density_nodes: spec.density_nodes,
            steady_logit: spec.steady_logit,
            steady_m: spec.steady_m,
            law_rho: spec.law_rho,
            law_gamma: spec.law_gamma,
            free,
            lower,
            upper,
            init,
            employment,
            tax,
            w_bar,
            r_bar,
            rental,
        })
    }

    /// Effective `(rho_zeta, sigma_zeta, sigma_e, mu_lambda)` at θ.
    fn values(&self, theta: &DVector<f64>) -> Result<[f64; 4]> {
        check_theta(self, theta)?;
        let mut v = self.base;
        for (k, param) in self.free.iter().enumerate() {
            v[param.index()] = theta[k];
        }
        validate_values(&v)?;
        Ok(v)
    }

    /// Steady state `z̄` (ζ at zero, distribution parameters at their
    /// steady values).
    pub fn zbar(&self) -> DVector<f64> {
        let mut z = DVector::zeros(N_STATE);
        for g in 0..2 {
            z[1 + 4 * g] = self.steady_logit[g];
            for j in 0..3 {
                z[2 + 4 * g + j] = self.steady_m[g][j];
            }
        }
        z
    }

    fn family_at(&self, mu_lambda: f64) -> HouseholdFamily {
        HouseholdFamily {
            mu_lambda,
            employment: self.employment,
            tax: self.tax,
            replacement: self.replacement,
            w_bar: self.w_bar,
            r_bar: self.r_bar,
            rental: self.rental,
            support: self.support,
            quad: self.quad,
            density_nodes: self.density_nodes,
        }
    }

    /// Exact population moments of income per employment group at state
    /// `z`: `(mean, variance, third central moment)` for ε = 0 then
    /// ε = 1. Closed form — the first three continuous asset moments are
    /// state entries, `λ ⟂ a` with `E λ^k = exp(−μ_λ k(k−1))`.
    fn population_moments(&self, mu_lambda: f64, z: &DVector<f64>) -> Result<DVector<f64>> {
        if z.len() != N_STATE {
            return invalid(format!("state has {} entries, expected {N_STATE}", z.len()));
        }
        let zeta = z[0];
        let w = self.w_bar * (1.0 + zeta);
        let r = self.r_bar + self.rental * zeta;
        if w <= 0.0 || w.is_nan() {
            return numeric(format!("wage w({zeta}) = {w} is not positive"));
        }
        let gross = 1.0 + r;
        let lam = |k: f64| (-mu_lambda * k * (k - 1.0)).exp();
        let (l2, l3) = (lam(2.0), lam(3.0));

        let mut out = DVector::zeros(2 * OBS_ORDER);
        for g in 0..2 {
            let logit = z[1 + 4 * g];
            let pi0 = 1.0 / (1.0 + (-logit).exp());
            let (m1, m2, m3) = (z[2 + 4 * g], z[3 + 4 * g], z[4 + 4 * g]);
            // Raw moments of assets: continuous part from its central
            // moments, thinned by the point mass at zero.
            let keep = 1.0 - pi0;
            let a1 = keep * m1;
            let a2 = keep * (m2 + m1 * m1);
            let a3 = keep * (m3 + 3.0 * m1 * m2 + m1 * m1 * m1);
            let xi = if g == 1 {
                w * (1.0 - self.tax)
            } else {
                w * self.replacement
            };
            // Raw moments of resources u = ξ + (1+r)a.
            let u1 = xi + gross * a1;
            let u2 = xi * xi + 2.0 * xi * gross * a1 + gross * gross * a2;
            let u3 = xi.powi(3)
                + 3.0 * xi * xi * gross * a1
                + 3.0 * xi * gross * gross * a2
                + gross.powi(3) * a3;
            // ι = λu with λ independent of u; back to central moments.
            let i1 = u1;
            let i2 = l2 * u2;
            let i3 = l3 * u3;
            out[OBS_ORDER * g] = i1;
            out[OBS_ORDER * g + 1] = i2 - i1 * i1;
            out[OBS_ORDER * g + 2] = i3 - 3.0 * i1 * i2 + 2.0 * i1.powi(3);
        }
        Ok(out)
    }
}

impl ModelProvider for StylizedHousehold {
    fn name(&self) -> &str {
        "household"
    }

    fn param_names(&self) -> Vec<String> {
        self.free.iter().map(|p| p.name().to_string()).collect()
    }

    fn param_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.lower.clone(), self.upper.clone())
    }

    fn init_theta(&self) -> DVector<f64> {
        DVector::from_vec(self.init.clone())
    }

    fn calibrated_theta(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.free.len(),
            self.free.iter().map(|p| self.base[p.index()]),
        )
    }

    fn micro_names(&self) -> Vec<String> {
        vec!["eps".into(), "iota".into()]
    }

    /// State space at θ. Deliberately never reads `μ_λ`: macro data are
    /// uninformative about the heterogeneity scale.
    fn build_state_space(&self, theta: &DVector<f64>) -> Result<StateSpaceModel> {
        let [rho_zeta, sigma_zeta, sigma_e, _mu_lambda] = self.values(theta)?;
        let mut a = DMatrix::zeros(N_STATE, N_STATE);
        a[(0, 0)] = rho_zeta;
        for i in 0..N_PSI {
            a[(1 + i, 1 + i)] = self.law_rho[i];
            a[(1 + i, 0)] = self.law_gamma[i];
        }
        let mut b = DMatrix::zeros(N_STATE, 1);
        b[(0, 0)] = sigma_zeta;
        let mut s = DMatrix::zeros(1, N_STATE);
        s[(0, 0)] = 1.0;
        StateSpaceModel::new(self.zbar(), a, b, s, DVector::from_element(1, sigma_e))
    }

    fn micro_family(&self, theta: &DVector<f64>) -> Result<Box<dyn MicroFamily>> {
        let [_, _, _, mu_lambda] = self.values(theta)?;
        Ok(Box::new(self.family_at(mu_lambda)))
    }

    /// First-order expansion of the exact moment function around `z̄`
    /// (central differences; the map is smooth, so the linearization
    /// error is second order in the state deviation).
    fn moment_map(&self, theta: &DVector<f64>) -> Result<AffineMomentMap> {
        let [_, _, _, mu_lambda] = self.values(theta)?;
        let zbar = self.zbar();
        let at_center = self.population_moments(mu_lambda, &zbar)?;
        let mut coeff = DMatrix::zeros(2 * OBS_ORDER, N_STATE);
        for i in 0..N_STATE {
            let h = 1e-5 * zbar[i].abs().max(1.0);
            let mut zp = zbar.clone();
            zp[i] += h;
            let mut zm = zbar.clone();
            zm[i] -= h;
            let diff = (self.population_moments(mu_lambda, &zp)?
                - self.population_moments(mu_lambda, &zm)?)
                / (2.0 * h);
            coeff.column_mut(i).copy_from(&diff);
        }
        let intercept = &at_center - &coeff * &zbar;
        AffineMomentMap::new(coeff, intercept)
    }

    fn moment_inputs(
        &self,
        theta: &DVector<f64>,
        data: &MicroDataset,
        order: usize,
    ) -> Result<MomentInputs> {
        if !(1..=OBS_ORDER).contains(&order) {
            return invalid(format!("moment order {order} outside 1..=3"));
        }
        let series = MomentSeries::from_dataset(data)?;
        let vcv = moment_vcv(series.averaged(), series.n_hat())?;
        let rows: Vec<usize> = (0..2)
            .flat_map(|g| (0..order).map(move |j| OBS_ORDER * g + j))
            .collect();
        Ok(MomentInputs {
            times: series.times().to_vec(),
            observed: series.observed_vectors(order)?,
            map: self.moment_map(theta)?.select_rows(&rows)?,
            noise: vcv.selected(order)?,
        })
    }
}

/// Micro family of the household provider at a fixed θ; everything is
/// owned, so the family is `'static` and thread-safe.
struct HouseholdFamily {
    mu_lambda: f64,
    employment: f64,
    tax: f64,
    replacement: f64,
    w_bar: f64,
    r_bar: f64,
    rental: f64,
    support: (f64, f64),
    quad: QuadSpec,
    density_nodes: usize,
}

impl HouseholdFamily {
    /// Micro parameters implied by state `z`; errors here are the lazy
    /// "infeasible distribution path" failures (negative wage, moments no
    /// exponential-polynomial density can match, stalled fit).
    fn params_at(&self, z: &DVector<f64>) -> Result<HouseholdMicroParams> {
        if z.len() != N_STATE {
            return invalid(format!("state has {} entries, expected {N_STATE}", z.len()));
        }
        let zeta = z[0];
        let w = self.w_bar * (1.0 + zeta);
        let r = self.r_bar + self.rental * zeta;
        if !(w.is_finite() && w > 0.0) {
            return numeric(format!("wage w({zeta}) = {w} is not positive"));
        }
        let mut dists = Vec::with_capacity(2);
        for g in 0..2 {
            let logit = z[1 + 4 * g];
            if !logit.is_finite() {
                return numeric(format!("point-mass logit for status {g} is not finite"));
            }
            let pi0 = 1.0 / (1.0 + (-logit).exp());
            let m = [z[2 + 4 * g], z[3 + 4 * g], z[4 + 4 * g]];
            let cont = fit_coefficients(m[0], &m[1..], self.support, self.quad)?;
            dists.push(MixtureAtZero::new(pi0, cont)?);
        }
        let d1 = dists.pop().expect("two asset distributions");
        let d0 = dists.pop().expect("two asset distributions");
        HouseholdMicroParams::new(
            w,
            r,
            self.tax,
            self.replacement,
            self.mu_lambda,
            [d0, d1],
            self.employment,
        )
    }
}

impl MicroFamily for HouseholdFamily {
    fn at_time<'a>(
        &'a self,
        t: usize,
        states: &[DVector<f64>],
        block: &MicroBlock,
    ) -> Result<Box<dyn PeriodDensity + Send + Sync + 'a>> {
        if t == 0 || t > states.len() {
            return invalid(format!(
                "micro block at t={t} outside the state path 1..={}",
                states.len()
            ));
        }
        let params = self.params_at(&states[t - 1])?;

        // Tabulate the income density per employment group over the
        // block's observed range; records outside fall back to direct
        // quadrature inside the table.
        let mut ranges: [Option<(f64, f64)>; 2] = [None, None];
        for rec in &block.records {
            if rec.y.len() != 2 {
                return invalid("household records must be (ε, ι) pairs");
            }
            let (eps, iota) = (rec.y[0], rec.y[1]);
            if eps != 0.0 && eps != 1.0 {
                return invalid(format!("employment indicator must be 0 or 1, got {eps}"));
            }
            if iota.is_finite() && iota > 0.0 {
                let slot = &mut ranges[eps as usize];
                *slot = match *slot {
                    None => Some((iota, iota)),
                    Some((lo, hi)) => Some((lo.min(iota), hi.max(iota))),
                };
            }
        }
        let mut tables: [Option<IncomeDensityTable>; 2] = [None, None];
        for g in 0..2 {
            if let Some(range) = ranges[g] {
                tables[g] = Some(IncomeDensityTable::build(
                    &params,
                    g,
                    range,
                    self.density_nodes,
                    self.quad,
                )?);
            }
        }
        Ok(Box::new(HouseholdPeriod {
            log_p_eps: [(1.0 - self.employment).ln(), self.employment.ln()],
            tables,
            params,
            quad: self.quad,
        }))
    }

    fn simulate(
        &self,
        t: usize,
        states: &[DVector<f64>],
        n: usize,
        rng: &mut rng::Rng,
    ) -> Result<Vec<MicroRecord>> {
        if t == 0 || t > states.len() {
            return invalid(format!(
                "micro block at t={t} outside the state path 1..={}",
                states.len()
            ));
        }
        let params = self.params_at(&states[t - 1])?;
        simulate_cross_section(&params, n, rng)
    }
}

struct HouseholdPeriod {
    log_p_eps: [f64; 2],
    tables: [Option<IncomeDensityTable>; 2],
    params: HouseholdMicroParams,
    quad: QuadSpec,
}

impl PeriodDensity for HouseholdPeriod {
    fn log_density(&self, record: &MicroRecord) -> f64 {
        if record.y.len() != 2 {
            return f64::NAN; // malformed record: surfaced as an error upstream
        }
        let (eps, iota) = (record.y[0], record.y[1]);
        if eps != 0.0 && eps != 1.0 || !iota.is_finite() {
            return f64::NAN;
        }
        if iota <= 0.0 {
            return f64::NEG_INFINITY; // incomes are positive with probability one
        }
        let g = eps as usize;
        let log_f = match &self.tables[g] {
            Some(table) => table.log_density(iota),
            None => match income_density(&self.params, g, iota, self.quad) {
                Ok(v) if v > 0.0 => v.ln(),
                Ok(_) => f64::NEG_INFINITY,
                Err(_) => f64::NAN,
            },
        };
        self.log_p_eps[g] + log_f
    }
}
