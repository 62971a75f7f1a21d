//! TOML model configuration.
//!
//! A config file names a model kind, its calibrated parameters, and the
//! free-parameter boxes:
//!
//! ```toml
//! schema = 1
//! kind = "toy"
//!
//! [[free]]
//! name = "rho"
//! lower = -0.95
//! upper = 0.95
//! init = 0.5
//!
//! [toy]
//! rho = 0.7
//! sigma_zeta = 0.6
//! sigma_e = 0.3
//! sigma_u = 0.5
//! ```
//!
//! Unknown keys are rejected so typos fail loudly instead of silently
//! running the defaults.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{invalid, Result};

use super::household::{HouseholdSpec, StylizedHousehold};
use super::toy::{LinearGaussianToy, ToyParam};
use super::ModelProvider;

/// Config format version this build reads.
pub const CONFIG_SCHEMA: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RootConfig {
    schema: u32,
    kind: String,
    #[serde(default)]
    free: Vec<FreeParam>,
    toy: Option<ToySection>,
    household: Option<HouseholdSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FreeParam {
    name: String,
    lower: f64,
    upper: f64,
    init: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToySection {
    rho: f64,
    sigma_zeta: f64,
    sigma_e: f64,
    sigma_u: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HouseholdSection {
    beta: f64,
    alpha: f64,
    delta: f64,
    replacement: f64,
    p01: f64,
    p10: f64,
    rho_zeta: f64,
    sigma_zeta: f64,
    sigma_e: f64,
    mu_lambda: f64,
    asset_support: [f64; 2],
    #[serde(default = "default_nodes")]
    quad_nodes: usize,
    #[serde(default = "default_nodes")]
    density_nodes: usize,
    steady: SteadySection,
    law: LawSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SteadySection {
    /// Point-mass logits `(l̄₀, l̄₁)`.
    logit_pm: [f64; 2],
    /// Continuous mean per employment status.
    m1: [f64; 2],
    /// Continuous variance per employment status.
    m2: [f64; 2],
    /// Continuous third central moment per employment status.
    m3: [f64; 2],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LawSection {
    /// Own persistence of `(l₀, m₀₁, m₀₂, m₀₃, l₁, m₁₁, m₁₂, m₁₃)`.
    rho: [f64; 8],
    /// Loading of the same components on the aggregate shock.
    gamma: [f64; 8],
}

fn default_nodes() -> usize {
    crate::microdens::INCOME_GRID_NODES
}

/// Builds a model provider from config text.
pub fn provider_from_toml(text: &str) -> Result<Box<dyn ModelProvider>> {
    let cfg: RootConfig = toml::from_str(text)
        .map_err(|e| crate::Error::Validation(format!("config parse error: {e}")))?;
    if cfg.schema != CONFIG_SCHEMA {
        return invalid(format!(
            "config schema {} not supported (this build reads schema {CONFIG_SCHEMA})",
            cfg.schema
        ));
    }
    match cfg.kind.as_str() {
        "toy" => {
            if cfg.household.is_some() {
                return invalid("kind = \"toy\" does not take a [household] section");
            }
            let s = cfg
                .toy
                .ok_or_else(|| crate::Error::Validation("missing [toy] section".into()))?;
            let toy = LinearGaussianToy::new(s.rho, s.sigma_zeta, s.sigma_e, s.sigma_u)?;
            if cfg.free.is_empty() {
                return Ok(Box::new(toy));
            }
            let mut free = Vec::with_capacity(cfg.free.len());
            for f in &cfg.free {
                free.push((ToyParam::from_name(&f.name)?, f.lower, f.upper, f.init));
            }
            Ok(Box::new(toy.with_free(&free)?))
        }
        "household" => {
            if cfg.toy.is_some() {
                return invalid("kind = \"household\" does not take a [toy] section");
            }
            let s = cfg
                .household
                .ok_or_else(|| crate::Error::Validation("missing [household] section".into()))?;
            let spec = HouseholdSpec {
                beta: s.beta,
                alpha: s.alpha,
                delta: s.delta,
                replacement: s.replacement,
                p01: s.p01,
                p10: s.p10,
                rho_zeta: s.rho_zeta,
                sigma_zeta: s.sigma_zeta,
                sigma_e: s.sigma_e,
                mu_lambda: s.mu_lambda,
                asset_support: (s.asset_support[0], s.asset_support[1]),
                quad_nodes: s.quad_nodes,
                density_nodes: s.density_nodes,
                steady_logit: s.steady.logit_pm,
                steady_m: [
                    [s.steady.m1[0], s.steady.m2[0], s.steady.m3[0]],
                    [s.steady.m1[1], s.steady.m2[1], s.steady.m3[1]],
                ],
                law_rho: s.law.rho,
                law_gamma: s.law.gamma,
                free: cfg
                    .free
                    .iter()
                    .map(|f| (f.name.clone(), f.lower, f.upper, f.init))
                    .collect(),
            };
            Ok(Box::new(StylizedHousehold::new(spec)?))
        }
        other => invalid(format!(
            "unknown model kind {other:?}; expected \"toy\" or \"household\""
        )),
    }
}

/// Reads and builds a provider from a config file on disk.
pub fn load_provider(path: impl AsRef<Path>) -> Result<Box<dyn ModelProvider>> {
    let text = fs::read_to_string(path.as_ref())?;
    provider_from_toml(&text)
}
