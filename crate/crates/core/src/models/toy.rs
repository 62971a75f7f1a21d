//! Linear Gaussian toy model: scalar AR(1) state, noisy macro
//! observation, Gaussian micro records around the state.
//!
//! ```text
//! z_t = ρ z_{t−1} + σ_ζ ε_t      x_t = z_t + e_t,   e ~ N(0, σ_e²)
//! y_{i,t} ~ N(z_t, σ_u²)  i.i.d. within the period
//! ```
//!
//! Everything about this model is tractable: the joint density
//! `p(x, y | θ)` is Gaussian (cross-section means are sufficient for the
//! state), so it serves as the oracle against which the simulation-based
//! likelihood and the pseudo-marginal chain are judged — unbiasedness,
//! posterior exactness, and the sufficiency of first moments are all
//! checkable to numerical precision.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::likelihood::{
    gaussian_micro_joint_loglik, logmeanexp, GaussianMicroFamily, MicroFamily,
};
use crate::microdens::MicroDataset;
use crate::momentbased::AffineMomentMap;
use crate::statespace::{kalman_filter, StateSpaceModel};

use super::{check_theta, ModelProvider, MomentInputs};

/// The four toy parameters, any subset of which can be freed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyParam {
    Rho,
    SigmaZeta,
    SigmaE,
    SigmaU,
}

impl ToyParam {
    pub fn from_name(name: &str) -> Result<ToyParam> {
        match name {
            "rho" => Ok(ToyParam::Rho),
            "sigma_zeta" => Ok(ToyParam::SigmaZeta),
            "sigma_e" => Ok(ToyParam::SigmaE),
            "sigma_u" => Ok(ToyParam::SigmaU),
            other => invalid(format!(
                "unknown toy parameter {other:?}; expected rho, sigma_zeta, sigma_e, or sigma_u"
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ToyParam::Rho => "rho",
            ToyParam::SigmaZeta => "sigma_zeta",
            ToyParam::SigmaE => "sigma_e",
            ToyParam::SigmaU => "sigma_u",
        }
    }

    fn index(self) -> usize {
        match self {
            ToyParam::Rho => 0,
            ToyParam::SigmaZeta => 1,
            ToyParam::SigmaE => 2,
            ToyParam::SigmaU => 3,
        }
    }
}

/// Provider for the toy model; see the module docs.
#[derive(Debug, Clone)]
pub struct LinearGaussianToy {
    base: [f64; 4], // (rho, sigma_zeta, sigma_e, sigma_u)
    free: Vec<ToyParam>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    init: Vec<f64>,
}

fn validate_values(v: &[f64; 4]) -> Result<()> {
    let [rho, sigma_zeta, sigma_e, sigma_u] = *v;
    if !(rho.is_finite() && rho.abs() < 1.0) {
        return invalid(format!("toy persistence must satisfy |rho| < 1, got {rho}"));
    }
    if !(sigma_zeta.is_finite() && sigma_zeta > 0.0) {
        return invalid(format!(
            "toy state innovation sd must be positive, got {sigma_zeta}"
        ));
    }
    if !(sigma_e.is_finite() && sigma_e >= 0.0) {
        return invalid(format!(
            "toy measurement sd must be nonnegative, got {sigma_e}"
        ));
    }
    if !(sigma_u.is_finite() && sigma_u > 0.0) {
        return invalid(format!("toy micro sd must be positive, got {sigma_u}"));
    }
    Ok(())
}

impl LinearGaussianToy {
    /// Fixed-parameter toy (no free parameters yet). A zero `sigma_e` is
    /// allowed: the state is then observed exactly.
    pub fn new(rho: f64, sigma_zeta: f64, sigma_e: f64, sigma_u: f64) -> Result<LinearGaussianToy> {
        let base = [rho, sigma_zeta, sigma_e, sigma_u];
        validate_values(&base)?;
        Ok(LinearGaussianToy {
            base,
            free: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            init: Vec::new(),
        })
    }

    /// Declare the free parameters, each as `(which, lower, upper, init)`
    /// in θ order.
    pub fn with_free(mut self, spec: &[(ToyParam, f64, f64, f64)]) -> Result<LinearGaussianToy> {
        self.free.clear();
        self.lower.clear();
        self.upper.clear();
        self.init.clear();
        for &(param, lower, upper, init) in spec {
            if self.free.contains(&param) {
                return invalid(format!("toy parameter {} freed twice", param.name()));
            }
            if !(lower.is_finite() && upper.is_finite() && lower < upper) {
                return invalid(format!("bad box [{lower}, {upper}] for {}", param.name()));
            }
            if !(init >= lower && init <= upper) {
                return invalid(format!("init {init} outside box for {}", param.name()));
            }
            self.free.push(param);
            self.lower.push(lower);
            self.upper.push(upper);
            self.init.push(init);
        }
        Ok(self)
    }

    /// Effective `(rho, sigma_zeta, sigma_e, sigma_u)` at θ.
    fn values(&self, theta: &DVector<f64>) -> Result<[f64; 4]> {
        check_theta(self, theta)?;
        let mut v = self.base;
        for (k, param) in self.free.iter().enumerate() {
            v[param.index()] = theta[k];
        }
        validate_values(&v)?;
        Ok(v)
    }

    fn sigma_u_at(&self, theta: &DVector<f64>) -> Result<f64> {
        Ok(self.values(theta)?[3])
    }

    /// Exact joint log density `ln p(x, y | θ)` (conjugate route: the
    /// cross-section mean is an extra observable, the within-period
    /// residuals factor out).
    pub fn exact_joint_loglik(
        &self,
        theta: &DVector<f64>,
        x: &[DVector<f64>],
        data: &MicroDataset,
    ) -> Result<f64> {
        let model = self.build_state_space(theta)?;
        let load = DVector::from_element(1, 1.0);
        gaussian_micro_joint_loglik(&model, x, data, &load, self.sigma_u_at(theta)?)
    }
}

impl ModelProvider for LinearGaussianToy {
    fn name(&self) -> &str {
        "toy"
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
        vec!["y".into()]
    }

    fn build_state_space(&self, theta: &DVector<f64>) -> Result<StateSpaceModel> {
        let [rho, sigma_zeta, sigma_e, _] = self.values(theta)?;
        StateSpaceModel::new(
            DVector::zeros(1),
            DMatrix::from_element(1, 1, rho),
            DMatrix::from_element(1, 1, sigma_zeta),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, sigma_e),
        )
    }

    fn micro_family(&self, theta: &DVector<f64>) -> Result<Box<dyn MicroFamily>> {
        let family =
            GaussianMicroFamily::new(DVector::from_element(1, 1.0), self.sigma_u_at(theta)?)?;
        Ok(Box::new(family))
    }

    fn moment_map(&self, theta: &DVector<f64>) -> Result<AffineMomentMap> {
        self.values(theta)?; // validate only; the mean map is parameter-free
        AffineMomentMap::new(DMatrix::from_element(1, 1, 1.0), DVector::zeros(1))
    }

    /// Means are sufficient here, so only `order = 1` is offered: one row
    /// per period, the cross-section mean, with exact noise `σ_u²/N̄`.
    fn moment_inputs(
        &self,
        theta: &DVector<f64>,
        data: &MicroDataset,
        order: usize,
    ) -> Result<MomentInputs> {
        if order != 1 {
            return invalid(
                "the toy moment route supports order 1 only (cross-section means are sufficient)",
            );
        }
        let sigma_u = self.sigma_u_at(theta)?;
        let mut observed = Vec::with_capacity(data.blocks().len());
        let mut total_n = 0usize;
        for block in data.blocks() {
            let n = block.records.len();
            total_n += n;
            let mean = block.records.iter().map(|r| r.y[0]).sum::<f64>() / n as f64;
            observed.push(DVector::from_element(1, mean));
        }
        let n_bar = total_n as f64 / data.blocks().len().max(1) as f64;
        Ok(MomentInputs {
            times: data.times(),
            observed,
            map: self.moment_map(theta)?,
            noise: DMatrix::from_element(1, 1, sigma_u * sigma_u / n_bar),
        })
    }
}

/// Exact normalized log posterior over a θ grid under a flat prior on
/// the grid: `ln p_i = ℓ(θ_i) − ln Σ_j exp ℓ(θ_j)`. With micro data the
/// joint likelihood is used; without, the macro likelihood.
pub fn toy_exact_posterior(
    toy: &LinearGaussianToy,
    grid: &[DVector<f64>],
    x: &[DVector<f64>],
    data: Option<&MicroDataset>,
) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return invalid("posterior grid must be non-empty");
    }
    let lls = grid
        .iter()
        .map(|theta| match data {
            Some(micro) => toy.exact_joint_loglik(theta, x, micro),
            None => {
                let model = toy.build_state_space(theta)?;
                Ok(kalman_filter(&model, x)?.loglik)
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let logsum = logmeanexp(&lls) + (lls.len() as f64).ln();
    Ok(lls.iter().map(|ll| ll - logsum).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microdens::{MicroBlock, MicroRecord};
    use crate::models::{simulate_joint, LikelihoodMethod, ProviderEstimator};

    fn free_rho_toy() -> LinearGaussianToy {
        LinearGaussianToy::new(0.7, 0.6, 0.3, 0.5)
            .unwrap()
            .with_free(&[(ToyParam::Rho, -0.95, 0.95, 0.5)])
            .unwrap()
    }

    #[test]
    fn zero_persistence_gives_zero_transition() {
        let toy = free_rho_toy();
        let model = toy
            .build_state_space(&DVector::from_element(1, 0.0))
            .unwrap();
        assert_eq!(model.a()[(0, 0)], 0.0);
        assert_eq!(model.b()[(0, 0)], 0.6);
    }

    #[test]
    fn zero_measurement_noise_is_allowed() {
        let toy = LinearGaussianToy::new(0.5, 1.0, 0.0, 1.0).unwrap();
        let model = toy.build_state_space(&DVector::zeros(0)).unwrap();
        let x = vec![
            DVector::from_element(1, 0.3),
            DVector::from_element(1, -0.1),
        ];
        assert!(kalman_filter(&model, &x).unwrap().loglik.is_finite());
    }

    #[test]
    fn parameter_box_is_enforced() {
        let toy = free_rho_toy();
        assert!(toy
            .build_state_space(&DVector::from_element(1, 0.99))
            .is_err());
        assert!(toy
            .build_state_space(&DVector::from_vec(vec![0.1, 0.2]))
            .is_err());
        assert!(LinearGaussianToy::new(1.1, 0.6, 0.3, 0.5).is_err());
        assert!(LinearGaussianToy::new(0.5, 0.0, 0.3, 0.5).is_err());
        let dup = LinearGaussianToy::new(0.7, 0.6, 0.3, 0.5)
            .unwrap()
            .with_free(&[
                (ToyParam::Rho, -0.9, 0.9, 0.0),
                (ToyParam::Rho, -0.9, 0.9, 0.0),
            ]);
        assert!(dup.is_err());
    }

    #[test]
    fn posterior_is_symmetric_when_the_data_are() {
        // Under ρ ↦ −ρ the state law maps z_t ↦ (−1)^t z_t, so all-zero
        // macro and micro observations have identical likelihood at ±ρ:
        // the grid posterior must be symmetric.
        let toy = free_rho_toy();
        let x: Vec<DVector<f64>> = (0..20).map(|_| DVector::zeros(1)).collect();
        let blocks = vec![
            MicroBlock {
                t: 5,
                records: (0..4).map(|i| MicroRecord::new(i, vec![0.0])).collect(),
            },
            MicroBlock {
                t: 12,
                records: (0..4).map(|i| MicroRecord::new(i, vec![0.0])).collect(),
            },
        ];
        let data = MicroDataset::new(blocks).unwrap();
        let grid: Vec<DVector<f64>> = (0..41)
            .map(|i| DVector::from_element(1, -0.9 + 0.045 * i as f64))
            .collect();
        let post = toy_exact_posterior(&toy, &grid, &x, Some(&data)).unwrap();
        for i in 0..post.len() {
            let j = post.len() - 1 - i;
            assert!(
                (post[i] - post[j]).abs() < 1e-10,
                "asymmetry at ±rho: {} vs {}",
                post[i],
                post[j]
            );
        }
        let total: f64 = post.iter().map(|lp| lp.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_refinement_barely_moves_posterior_moments() {
        let toy = free_rho_toy();
        let truth = DVector::from_element(1, 0.7);
        let sim = simulate_joint(&toy, &truth, 60, &[10, 25, 40, 55], 30, 5).unwrap();

        let moments = |n_grid: usize| {
            let grid: Vec<DVector<f64>> = (0..n_grid)
                .map(|i| DVector::from_element(1, -0.95 + 1.9 * (i as f64 + 0.5) / n_grid as f64))
                .collect();
            let post = toy_exact_posterior(&toy, &grid, &sim.x, Some(&sim.micro)).unwrap();
            let mean: f64 = grid.iter().zip(&post).map(|(g, lp)| g[0] * lp.exp()).sum();
            let var: f64 = grid
                .iter()
                .zip(&post)
                .map(|(g, lp)| (g[0] - mean).powi(2) * lp.exp())
                .sum();
            (mean, var.sqrt())
        };
        let (m200, s200) = moments(200);
        let (m400, s400) = moments(400);
        assert!((m200 - m400).abs() < 1e-3, "mean moved {m200} -> {m400}");
        assert!((s200 - s400).abs() < 1e-3, "sd moved {s200} -> {s400}");
    }

    #[test]
    fn moment_route_wiring_matches_exact_joint() {
        // Provider-level check that the order-1 moment estimator differs
        // from the exact joint likelihood by a θ-free constant.
        let toy = free_rho_toy();
        let truth = DVector::from_element(1, 0.6);
        let sim = simulate_joint(&toy, &truth, 40, &[10, 20, 30], 25, 9).unwrap();
        let est = ProviderEstimator::new(
            &toy,
            &sim.x,
            Some(&sim.micro),
            LikelihoodMethod::Moments { order: 1 },
        )
        .unwrap();
        let diff_at = |rho: f64| {
            let theta = DVector::from_element(1, rho);
            let exact = toy.exact_joint_loglik(&theta, &sim.x, &sim.micro).unwrap();
            let moment = est.loglik(&theta, 0).unwrap();
            exact - moment
        };
        let d1 = diff_at(0.2);
        let d2 = diff_at(0.75);
        assert!((d1 - d2).abs() < 1e-8, "constant drifted: {d1} vs {d2}");

        assert!(ProviderEstimator::new(
            &toy,
            &sim.x,
            Some(&sim.micro),
            LikelihoodMethod::Moments { order: 2 },
        )
        .unwrap()
        .loglik(&truth, 0)
        .is_err());
    }
}
