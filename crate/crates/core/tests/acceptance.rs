//! Acceptance gate: the ten guarantees this crate advertises, one test
//! each, checked at their stated tolerances. Every test prints one
//! `ok`/`FAILED` line under the standard harness, so this target is an
//! executable summary of what the library promises:
//!
//!  1. the J-draw micro likelihood estimate is unbiased in levels;
//!  2. pseudo-marginal MCMC targets the exact posterior at any J;
//!  3. with sufficient moment observables the moment route reproduces the
//!     exact joint likelihood up to a θ-free constant;
//!  4. the sampling covariance of cross-sectional moments is the
//!     advertised closed form, and matches simulation;
//!  5. that covariance is the asymptotic law, not the finite-N one — the
//!     exact small-N law of the second moment is χ², not Gaussian;
//!  6. the household income density is a density and collapses to the
//!     lognormal closed form when assets degenerate;
//!  7. selection truncation uses the closed-form Gaussian normalizer and
//!     matches simulated retention;
//!  8. the two-period panel density is a density and matches simulated
//!     pair frequencies;
//!  9. the measurement-factor scale is invisible to the macro block and
//!     identified only through micro data;
//! 10. every simulation and likelihood output is byte-identical across
//!     worker counts.
//!
//! The estimator-level checks (1–3) run on a toy calibration with macro
//! measurement noise 0.05 — tighter than the demo value in
//! `configs/toy.toml`. That is a power calculation, not a convenience:
//! unbiasedness is checked through a Monte Carlo mean of likelihood
//! *ratios*, and with loose macro noise the smoother is so diffuse
//! relative to the micro information that the log ratio has standard
//! deviation ≈ 26 — a mean carried by draws no feasible seed count will
//! see. At noise 0.05 the measured log-ratio spread is ≈ 1.4, which a
//! 10⁴-seed average resolves cleanly.

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crosslik::expfam::fit_coefficients;
use crosslik::likelihood::full_info_loglik;
use crosslik::mcmc::{adaptive_rwmh, diagnostics, MhSettings, PriorSpec};
use crosslik::microdens::{
    income_density, labor_income, simulate_cross_section, truncated_density, DensityKind,
    HouseholdMicroParams, MixtureAtZero, MvNormal, PanelDensityEvaluator, SelectionRule,
};
use crosslik::models::{
    load_provider, simulate_joint, toy_exact_posterior, LikelihoodMethod, LinearGaussianToy,
    ModelProvider, ProviderEstimator, SavingsPolicy, SimulatedJoint, ToyParam,
};
use crosslik::momentbased::{central_moments, moment_vcv};
use crosslik::quad::{QuadRule, QuadSpec};
use crosslik::rng;
use crosslik::statespace::kalman_filter;
use crosslik::stats::{chi2_cdf, ks_test, lognormal_logpdf, norm_cdf, norm_pdf};

// ---------------------------------------------------------------- fixtures

/// One free parameter (the macro persistence), truth 0.7.
fn acceptance_toy() -> LinearGaussianToy {
    LinearGaussianToy::new(0.7, 0.6, 0.05, 0.5)
        .unwrap()
        .with_free(&[(ToyParam::Rho, -0.95, 0.95, 0.5)])
        .unwrap()
}

fn theta1(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

/// The shared toy dataset: 20 macro periods, four cross sections of 50.
fn toy_dataset(toy: &LinearGaussianToy) -> SimulatedJoint {
    simulate_joint(toy, &theta1(0.7), 20, &[5, 10, 15, 20], 50, 20_260_816).unwrap()
}

fn household_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/household.toml")
}

/// Micro parameters at the household calibration: steady-state prices,
/// the calibrated asset mixtures, and the stationary employment rate.
fn calibrated_micro(point_mass: [f64; 2]) -> HouseholdMicroParams {
    let support = (0.0, 12.0);
    let cont_u = fit_coefficients(1.2, &[0.8, 0.3], support, QuadSpec::default()).unwrap();
    let cont_e = fit_coefficients(2.0, &[1.5, 0.6], support, QuadSpec::default()).unwrap();
    HouseholdMicroParams::new(
        1.0815,
        0.0417,
        0.0114,
        0.15,
        -0.25,
        [
            MixtureAtZero::new(point_mass[0], cont_u).unwrap(),
            MixtureAtZero::new(point_mass[1], cont_e).unwrap(),
        ],
        0.9294,
    )
    .unwrap()
}

fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

// ---------------------------------------------------------------- criteria

/// The J = 1 estimate `p̂(y|x)` averages to the exact conditional micro
/// likelihood across smoother seeds: the mean of `exp(estimate − exact)`
/// over 10⁴ seeds sits within 4 Monte Carlo standard errors of 1, in
/// under two minutes.
#[test]
fn criterion_01_micro_estimate_is_unbiased_in_levels() {
    let started = Instant::now();
    let toy = acceptance_toy();
    let theta = theta1(0.7);
    let sim = toy_dataset(&toy);
    let model = toy.build_state_space(&theta).unwrap();
    let family = toy.micro_family(&theta).unwrap();
    let exact_micro = toy.exact_joint_loglik(&theta, &sim.x, &sim.micro).unwrap()
        - kalman_filter(&model, &sim.x).unwrap().loglik;

    const SEEDS: u64 = 10_000;
    let ratios: Vec<f64> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let est =
                full_info_loglik(&model, family.as_ref(), &sim.x, &sim.micro, 1, seed).unwrap();
            (est.micro_loglik - exact_micro).exp()
        })
        .collect();
    let (mean, sd) = mean_and_sd(&ratios);
    let se = sd / (SEEDS as f64).sqrt();
    let elapsed = started.elapsed();

    println!(
        "criterion 1: mean ratio {mean:.4} (se {se:.4}, |t| = {:.2}), {elapsed:.2?}",
        (mean - 1.0).abs() / se
    );
    assert!(se.is_finite() && se > 0.0);
    assert!(
        (mean - 1.0).abs() <= 4.0 * se,
        "level bias: mean ratio {mean} is {:.2} se away from 1",
        (mean - 1.0).abs() / se
    );
    assert!(
        elapsed.as_secs_f64() < 120.0,
        "unbiasedness check took {elapsed:.2?}, budget is two minutes"
    );
}

/// A 50 000-draw pseudo-marginal chain with J = 10 noisy likelihood draws
/// matches the exact grid posterior: posterior mean within 3 Monte Carlo
/// standard errors (via effective sample size) and Kolmogorov–Smirnov
/// distance below 0.05, in under ten minutes.
#[test]
fn criterion_02_pseudo_marginal_chain_targets_the_exact_posterior() {
    let started = Instant::now();
    let toy = acceptance_toy();
    let sim = toy_dataset(&toy);

    let est = ProviderEstimator::new(
        &toy,
        &sim.x,
        Some(&sim.micro),
        LikelihoodMethod::FullInfo { n_draws: 10 },
    )
    .unwrap();
    let mut settings = MhSettings::new(
        theta1(0.5),
        PriorSpec::flat_box(vec![-0.95], vec![0.95]).unwrap(),
    );
    settings.n_draws = 50_000;
    settings.burn_in = 5_000;
    let chain = adaptive_rwmh(&est, &settings, 99).unwrap();
    let elapsed = started.elapsed();

    // Exact posterior over a fine grid spanning the flat prior box; cell
    // masses come from the exact joint likelihood (conjugate oracle).
    let step = 0.001;
    let n_grid = 1901;
    let grid_lo = -0.95;
    let grid: Vec<DVector<f64>> = (0..n_grid)
        .map(|i| theta1((grid_lo + step * i as f64).clamp(-0.95, 0.95)))
        .collect();
    let log_masses = toy_exact_posterior(&toy, &grid, &sim.x, Some(&sim.micro)).unwrap();
    let masses: Vec<f64> = log_masses.iter().map(|lp| lp.exp()).collect();
    let grid_mean: f64 = masses
        .iter()
        .zip(&grid)
        .map(|(m, theta)| m * theta[0])
        .sum();

    let kept: Vec<f64> = chain.kept().column(0).iter().copied().collect();
    let (chain_mean, chain_sd) = mean_and_sd(&kept);
    let d = diagnostics(&chain).unwrap();
    let mcse = chain_sd / d.ess[0].sqrt();

    // Piecewise-linear CDF of the grid posterior: mass i spread over the
    // cell [g_i − step/2, g_i + step/2).
    let mut cum = Vec::with_capacity(masses.len() + 1);
    cum.push(0.0);
    for m in &masses {
        cum.push(cum.last().unwrap() + m);
    }
    let cdf = |theta: f64| -> f64 {
        let pos = (theta - (grid_lo - 0.5 * step)) / step;
        if pos <= 0.0 {
            return 0.0;
        }
        let cell = pos.floor() as usize;
        if cell >= masses.len() {
            return 1.0;
        }
        (cum[cell] + masses[cell] * (pos - cell as f64)).min(1.0)
    };
    let ks = ks_test(&kept, cdf).unwrap();

    println!(
        "criterion 2: chain mean {chain_mean:.5} vs grid {grid_mean:.5} (mcse {mcse:.5}), \
         KS {:.4}, acceptance {:.3}, ess {:.0}, {elapsed:.2?}",
        ks.statistic, d.acceptance_rate, d.ess[0]
    );
    assert!(
        (chain_mean - grid_mean).abs() <= 3.0 * mcse,
        "posterior mean {chain_mean} vs exact {grid_mean} misses by {:.2} mcse",
        (chain_mean - grid_mean).abs() / mcse
    );
    assert!(
        ks.statistic < 0.05,
        "KS distance {} between chain and exact posterior",
        ks.statistic
    );
    assert!(
        elapsed.as_secs_f64() < 600.0,
        "pseudo-marginal check took {elapsed:.2?}, budget is ten minutes"
    );
}

/// Cross-section means are sufficient in the toy, so the order-1 moment
/// likelihood differs from the exact joint likelihood by a θ-free
/// constant: the difference moves by less than 1e-8 across a 25-point
/// parameter grid.
#[test]
fn criterion_03_sufficient_moments_reproduce_the_exact_likelihood() {
    let toy = acceptance_toy();
    let sim = toy_dataset(&toy);
    let est = ProviderEstimator::new(
        &toy,
        &sim.x,
        Some(&sim.micro),
        LikelihoodMethod::Moments { order: 1 },
    )
    .unwrap();

    let diffs: Vec<f64> = (0..25)
        .map(|i| {
            let theta = theta1(-0.9 + 0.075 * i as f64);
            let moment = est.loglik(&theta, 0).unwrap();
            let exact = toy.exact_joint_loglik(&theta, &sim.x, &sim.micro).unwrap();
            moment - exact
        })
        .collect();
    let spread = diffs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - diffs.iter().cloned().fold(f64::INFINITY, f64::min);

    println!(
        "criterion 3: constant offset {:.6}, spread {spread:.2e} over 25 grid points",
        diffs[0]
    );
    assert!(
        spread < 1e-8,
        "moment-minus-exact log likelihood moves by {spread:.3e} in θ"
    );
}

/// The moment sampling covariance is the advertised closed form: for
/// standard-normal population moments and N̂ = 100 the per-group block is
/// exactly diag(0.01, 0.02, 0.06), and at N = 1000 it matches the
/// empirical covariance over 10⁴ replications within 10% entrywise.
#[test]
fn criterion_04_moment_sampling_covariance_is_the_closed_form() {
    // Standard normal: m₂ = 1, m₃ = 0, m₄ = 3, m₅ = 0, m₆ = 15.
    let std_normal = [0.0, 1.0, 0.0, 3.0, 0.0, 15.0];
    let vcv = moment_vcv(&[std_normal, std_normal], [100.0, 100.0]).unwrap();
    let expected = nalgebra::DMatrix::from_diagonal(&DVector::from_row_slice(&[
        0.01, 0.02, 0.06, 0.01, 0.02, 0.06,
    ]));
    assert_eq!(*vcv.full(), expected, "closed form must hold exactly");

    // Monte Carlo: sampling covariance of (m̂₁, m̂₂, m̂₃) at N = 1000.
    const REPS: usize = 10_000;
    const N: usize = 1000;
    let triples: Vec<[f64; 3]> = (0..REPS as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rng::substream(314, rep);
            let ys: Vec<f64> = (0..N)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let m = central_moments(&ys, 3).unwrap();
            [m[0], m[1], m[2]]
        })
        .collect();
    let mean = |k: usize| triples.iter().map(|t| t[k]).sum::<f64>() / REPS as f64;
    let means = [mean(0), mean(1), mean(2)];
    let cov = |i: usize, j: usize| {
        triples
            .iter()
            .map(|t| (t[i] - means[i]) * (t[j] - means[j]))
            .sum::<f64>()
            / (REPS - 1) as f64
    };
    let theory = moment_vcv(&[std_normal, std_normal], [N as f64, N as f64]).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let t = theory.full()[(i, j)];
            let e = cov(i, j);
            // Zero entries are judged on the scale of the corresponding
            // diagonal entries.
            let scale = if t != 0.0 {
                t.abs()
            } else {
                (theory.full()[(i, i)] * theory.full()[(j, j)]).sqrt()
            };
            worst = worst.max((e - t).abs() / scale);
            assert!(
                (e - t).abs() <= 0.10 * scale,
                "vcv entry ({i},{j}): empirical {e:.3e} vs formula {t:.3e}"
            );
        }
    }
    println!("criterion 4: exact block equality; worst MC relative error {worst:.3}");
}

/// The closed-form covariance is asymptotic. At N = 5 the exact law of
/// `N·m̂₂/m₂` is χ²(N−1): a 10⁴-replication sample passes a 1% KS test
/// against χ²(4) and rejects the matching Gaussian approximation at 1%.
#[test]
fn criterion_05_small_sample_second_moment_is_chi_squared_not_gaussian() {
    const REPS: usize = 10_000;
    const N: usize = 5;
    let stats: Vec<f64> = (0..REPS as u64)
        .map(|rep| {
            let mut rng = rng::substream(2718, rep);
            let ys: Vec<f64> = (0..N)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            N as f64 * central_moments(&ys, 2).unwrap()[1]
        })
        .collect();

    let chi2 = ks_test(&stats, |x| chi2_cdf(x, (N - 1) as f64).unwrap()).unwrap();
    // The asymptotic normal approximation implied by the covariance
    // formula: mean N·m₂/m₂ = N, variance N·(m₄ − m₂²)/m₂² = 2N.
    let sd = (2.0 * N as f64).sqrt();
    let gauss = ks_test(&stats, |x| norm_cdf((x - N as f64) / sd)).unwrap();

    println!(
        "criterion 5: χ²(4) KS p = {:.3}; Gaussian KS p = {:.2e}",
        chi2.p_value, gauss.p_value
    );
    assert!(
        chi2.p_value > 0.01,
        "exact χ²(4) law rejected: KS {} (p = {})",
        chi2.statistic,
        chi2.p_value
    );
    assert!(
        gauss.p_value < 0.01,
        "Gaussian approximation not rejected at N = 5: p = {}",
        gauss.p_value
    );
}

/// The household income density integrates to one (1e-4), collapses to
/// the lognormal closed form when all asset mass sits at zero (1e-6 at
/// ten points), and matches a million-draw simulated histogram bin by
/// bin.
#[test]
fn criterion_06_income_density_normalizes_and_matches_closed_form() {
    // Normalization with atoms and continuous mass, both groups.
    let p = calibrated_micro([0.2994, 0.0997]);
    let sigma = p.sigma_lambda();
    for eps in [0usize, 1] {
        let xi = labor_income(&p, eps).unwrap();
        let lo = xi.ln() + p.mu_lambda() - 9.0 * sigma;
        let hi = (xi + (1.0 + p.rate()) * 12.0).ln() + p.mu_lambda() + 9.0 * sigma;
        let rule = QuadRule::gauss_legendre(800, lo, hi).unwrap();
        let total = rule.integrate(|s| {
            let iota = s.exp();
            income_density(&p, eps, iota, QuadSpec::default()).unwrap() * iota
        });
        assert!(
            (total - 1.0).abs() <= 1e-4,
            "income density for ε = {eps} integrates to {total}"
        );
    }

    // Degenerate assets: ι = λ·ξ_ε, so the density is the lognormal with
    // log-scale μ_λ + ln ξ_ε.
    let atom = calibrated_micro([1.0, 1.0]);
    let xi = labor_income(&atom, 1).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..10 {
        let iota = xi * (atom.mu_lambda() + sigma * (-2.25 + 0.5 * k as f64)).exp();
        let direct = income_density(&atom, 1, iota, QuadSpec::default()).unwrap();
        let closed = lognormal_logpdf(iota, atom.mu_lambda() + xi.ln(), sigma).exp();
        worst = worst.max((direct - closed).abs());
        assert!(
            (direct - closed).abs() <= 1e-6,
            "at ι = {iota}: quadrature {direct} vs lognormal {closed}"
        );
    }

    // Million-draw histogram against bin probabilities from the density.
    const N: usize = 1_000_000;
    let mut rng = rng::root(20_260_816);
    let records = simulate_cross_section(&p, N, &mut rng).unwrap();
    let mut worst_bin: f64 = 0.0;
    for eps in [0usize, 1] {
        let mut incomes: Vec<f64> = records
            .iter()
            .filter(|r| r.y[0] as usize == eps)
            .map(|r| r.y[1])
            .collect();
        incomes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n_group = incomes.len();
        // 25 log-spaced bins between the 1% and 99% group quantiles.
        let lo = incomes[n_group / 100].ln();
        let hi = incomes[n_group - 1 - n_group / 100].ln();
        let n_bins = 25;
        let width = (hi - lo) / n_bins as f64;
        for b in 0..n_bins {
            let (s0, s1) = (lo + width * b as f64, lo + width * (b + 1) as f64);
            let count = incomes
                .iter()
                .filter(|&&v| v >= s0.exp() && v < s1.exp())
                .count();
            let freq = count as f64 / n_group as f64;
            let rule = QuadRule::gauss_legendre(60, s0, s1).unwrap();
            let prob = rule.integrate(|s| {
                income_density(&p, eps, s.exp(), QuadSpec::default()).unwrap() * s.exp()
            });
            let se = (prob * (1.0 - prob) / n_group as f64).sqrt();
            worst_bin = worst_bin.max((freq - prob).abs() / se.max(1e-12));
            assert!(
                (freq - prob).abs() <= 4.0 * se + 1e-5,
                "ε = {eps}, bin {b}: frequency {freq:.5} vs probability {prob:.5} (se {se:.1e})"
            );
        }
    }
    println!("criterion 6: closed-form gap ≤ {worst:.1e}; worst histogram bin {worst_bin:.2} se");
}

/// Selection truncation: for a Gaussian base with a linear-index rule the
/// library's normalizer matches an independent quadrature of the
/// univariate normal density within 1e-10, and the simulated retained
/// fraction agrees within 4 standard errors.
#[test]
fn criterion_07_truncation_normalizer_matches_the_gaussian_closed_form() {
    let mean = DVector::from_row_slice(&[0.4, 1.1]);
    let cov = nalgebra::DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, 0.9]);
    let coeffs = DVector::from_row_slice(&[1.0, -0.7]);
    let threshold = 0.3;
    let base = MvNormal::new(mean.clone(), cov.clone()).unwrap();
    let td = truncated_density(
        DensityKind::Gaussian(base),
        SelectionRule::LinearIndex {
            coeffs: coeffs.clone(),
            threshold,
        },
        None,
    )
    .unwrap();

    // Independent route: the linear index c'y is univariate Gaussian, so
    // the selection mass is an upper normal tail — integrate the standard
    // normal density directly instead of calling any CDF.
    let index_mean = coeffs.dot(&mean);
    let index_sd = coeffs.dot(&(&cov * &coeffs)).sqrt();
    let z = (threshold - index_mean) / index_sd;
    let oracle = QuadRule::gauss_legendre(1200, z, z + 14.0)
        .unwrap()
        .integrate(norm_pdf);
    let gap = (td.mass() - oracle).abs();
    assert!(
        gap <= 1e-10,
        "selection mass {} vs quadrature of the normal density {oracle} (gap {gap:.2e})",
        td.mass()
    );

    // Monte Carlo retention.
    const N: usize = 200_000;
    let sampler = MvNormal::new(mean, cov).unwrap();
    let mut rng = rng::root(777);
    let retained = (0..N)
        .filter(|_| coeffs.dot(&sampler.sample(&mut rng)) >= threshold)
        .count();
    let frac = retained as f64 / N as f64;
    let se = (td.mass() * (1.0 - td.mass()) / N as f64).sqrt();
    println!(
        "criterion 7: closed-form gap {gap:.2e}; retention {frac:.4} vs mass {:.4} ({:.2} se)",
        td.mass(),
        (frac - td.mass()).abs() / se
    );
    assert!(
        (frac - td.mass()).abs() <= 4.0 * se,
        "retained fraction {frac} vs selection mass {} (se {se:.1e})",
        td.mass()
    );
}

/// The two-period panel density integrates to one over the income plane
/// (1e-3, zero point mass) and assigns rectangle probabilities matching
/// simulated income pairs within 4 standard errors, for a linear savings
/// policy.
#[test]
fn criterion_08_panel_density_normalizes_and_matches_simulation() {
    let chain = crosslik::microdens::EmploymentMarkov::new(0.5, 0.038).unwrap();
    let prev = calibrated_micro([0.0, 0.0]);
    let curr = HouseholdMicroParams::new(
        1.06,
        0.035,
        0.0114,
        0.15,
        -0.25,
        [prev.asset_dist(0).clone(), prev.asset_dist(1).clone()],
        0.9294,
    )
    .unwrap();
    let policy = SavingsPolicy::from_fn(0.0, 12.0, 121, |_, a| 0.2 + 0.55 * a).unwrap();
    let ev = PanelDensityEvaluator::new(chain, &prev, &curr, &policy, 1, 1, 400).unwrap();
    let (rlo, rhi) = ev.ratio_range();

    // Normalization in (log ι_{t−1}, ratio) coordinates, where the wedge
    // support becomes a rectangle: dι_prev dι_curr = ι_prev e^{2s} ds dr.
    let sigma = prev.sigma_lambda();
    let xi_prev = labor_income(&prev, 1).unwrap();
    let u_hi = xi_prev + (1.0 + prev.rate()) * 12.0;
    let s_lo = xi_prev.ln() + prev.mu_lambda() - 9.0 * sigma;
    let s_hi = u_hi.ln() + prev.mu_lambda() + 9.0 * sigma;
    let outer = QuadRule::gauss_legendre(400, s_lo, s_hi).unwrap();
    let inner = QuadRule::gauss_legendre(240, rlo, rhi).unwrap();
    let total = outer.integrate(|s| {
        let ip = s.exp();
        ip * ip * inner.integrate(|r| ev.income_pair_density(ip, r * ip).unwrap())
    });
    assert!(
        (total - 1.0).abs() <= 1e-3,
        "pair density integrates to {total}"
    );

    // Simulated pairs against rectangle probabilities.
    const N: usize = 200_000;
    let mut rng = rng::root(5151);
    let cont = prev.asset_dist(1).continuous().clone();
    let xi_curr = labor_income(&curr, 1).unwrap();
    let (g_prev, g_curr) = (1.0 + prev.rate(), 1.0 + curr.rate());
    let rects = [(0.6, 1.2, 0.7, 1.3), (1.2, 2.5, 0.9, 2.2)];
    let mut hits = [0usize; 2];
    for _ in 0..N {
        let a = cont.sample(&mut rng);
        let lambda = (prev.mu_lambda() + sigma * rng.sample::<f64, _>(StandardNormal)).exp();
        let ip = lambda * (xi_prev + g_prev * a);
        let ic = lambda * (xi_curr + g_curr * policy.value(1, a));
        for (h, &(p0, p1, c0, c1)) in hits.iter_mut().zip(&rects) {
            if ip >= p0 && ip < p1 && ic >= c0 && ic < c1 {
                *h += 1;
            }
        }
    }
    let mut worst: f64 = 0.0;
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
        let frac = hit as f64 / N as f64;
        let se = (frac * (1.0 - frac) / N as f64).sqrt();
        worst = worst.max((frac - prob).abs() / se.max(1e-4));
        assert!(
            (frac - prob).abs() <= 4.0 * se.max(1e-4),
            "rectangle ({p0},{p1})×({c0},{c1}): simulated {frac:.5} vs density {prob:.5}"
        );
    }
    println!("criterion 8: normalization {total:.6}; worst rectangle {worst:.2} se");
}

/// The measurement-factor scale μ_λ never reaches the macro block: the
/// state-space matrices are bitwise invariant in it and the macro-only
/// likelihood is exactly flat along it, while the full-information
/// likelihood genuinely curves.
#[test]
fn criterion_09_measurement_scale_is_identified_only_through_micro_data() {
    let provider = load_provider(household_config()).unwrap();
    let cal = provider.calibrated_theta(); // (ρ_ζ, σ_e, μ_λ)
    let at_mu = |mu: f64| DVector::from_row_slice(&[cal[0], cal[1], mu]);

    // Bitwise matrix invariance across the μ_λ box.
    let reference = provider.build_state_space(&at_mu(-0.85)).unwrap();
    for mu in [-0.65, -0.45, -0.25, -0.05] {
        let model = provider.build_state_space(&at_mu(mu)).unwrap();
        assert_eq!(model.a(), reference.a(), "transition depends on μ_λ");
        assert_eq!(model.b(), reference.b(), "shock loading depends on μ_λ");
        assert_eq!(model.s(), reference.s(), "observation map depends on μ_λ");
        assert_eq!(
            model.zbar(),
            reference.zbar(),
            "steady state depends on μ_λ"
        );
        assert_eq!(
            model.sigma_e(),
            reference.sigma_e(),
            "measurement noise depends on μ_λ"
        );
    }

    let sim = simulate_joint(provider.as_ref(), &cal, 40, &[10, 20, 30, 40], 80, 606).unwrap();

    let macro_est =
        ProviderEstimator::new(provider.as_ref(), &sim.x, None, LikelihoodMethod::MacroOnly)
            .unwrap();
    let grid = [-0.85, -0.65, -0.45, -0.25, -0.05];
    let macro_lls: Vec<f64> = grid
        .iter()
        .map(|&mu| macro_est.loglik(&at_mu(mu), 0).unwrap())
        .collect();
    assert!(
        macro_lls.iter().all(|&ll| ll == macro_lls[0]),
        "macro likelihood moves along μ_λ: {macro_lls:?}"
    );
    let macro_curvature = (macro_lls[4] - 2.0 * macro_lls[2] + macro_lls[0]).abs();

    let full_est = ProviderEstimator::new(
        provider.as_ref(),
        &sim.x,
        Some(&sim.micro),
        LikelihoodMethod::FullInfo { n_draws: 3 },
    )
    .unwrap()
    .with_fixed_noise_seed(4242);
    let full_lls: Vec<f64> = [-0.45, -0.25, -0.05]
        .iter()
        .map(|&mu| full_est.loglik(&at_mu(mu), 0).unwrap())
        .collect();
    let full_curvature = (full_lls[2] - 2.0 * full_lls[1] + full_lls[0]).abs();

    println!(
        "criterion 9: macro flat (curvature {macro_curvature}); full-info curvature {full_curvature:.3}"
    );
    assert_eq!(macro_curvature, 0.0);
    assert!(
        full_curvature > macro_curvature,
        "micro data add no curvature along μ_λ"
    );
    assert!(
        full_curvature > 1e-3,
        "full-information curvature {full_curvature:.3e} is indistinguishable from roundoff"
    );
}

/// Simulation and every likelihood route produce bit-identical numbers
/// whether the work runs on one thread or four.
#[test]
fn criterion_10_outputs_are_byte_identical_across_worker_counts() {
    fn run_everything(threads: usize) -> Vec<u64> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let mut bits = Vec::new();
            fn push(v: f64, bits: &mut Vec<u64>) {
                bits.push(v.to_bits());
            }

            // Toy: data, all three likelihood routes, and a short chain.
            let toy = acceptance_toy();
            let theta = theta1(0.7);
            let sim = simulate_joint(&toy, &theta, 20, &[5, 10, 15, 20], 50, 77).unwrap();
            for x in &sim.x {
                push(x[0], &mut bits);
            }
            for block in sim.micro.blocks() {
                for rec in &block.records {
                    for &v in &rec.y {
                        push(v, &mut bits);
                    }
                }
            }
            for (method, seed) in [
                (LikelihoodMethod::FullInfo { n_draws: 8 }, 5u64),
                (LikelihoodMethod::MacroOnly, 6),
                (LikelihoodMethod::Moments { order: 1 }, 7),
            ] {
                let est = ProviderEstimator::new(&toy, &sim.x, Some(&sim.micro), method).unwrap();
                push(est.loglik(&theta, seed).unwrap(), &mut bits);
            }
            let mut settings = MhSettings::new(
                theta1(0.5),
                PriorSpec::flat_box(vec![-0.95], vec![0.95]).unwrap(),
            );
            settings.n_draws = 400;
            settings.burn_in = 100;
            let est = ProviderEstimator::new(
                &toy,
                &sim.x,
                Some(&sim.micro),
                LikelihoodMethod::FullInfo { n_draws: 4 },
            )
            .unwrap();
            let chain = adaptive_rwmh(&est, &settings, 11).unwrap();
            for v in chain.draws.iter() {
                push(*v, &mut bits);
            }
            for v in &chain.logpost {
                push(*v, &mut bits);
            }

            // Household: data and the micro-bearing likelihood routes.
            let provider = load_provider(household_config()).unwrap();
            let cal = provider.calibrated_theta();
            let hsim = simulate_joint(provider.as_ref(), &cal, 12, &[6, 12], 30, 13).unwrap();
            for x in &hsim.x {
                push(x[0], &mut bits);
            }
            for block in hsim.micro.blocks() {
                for rec in &block.records {
                    for &v in &rec.y {
                        push(v, &mut bits);
                    }
                }
            }
            for (method, seed) in [
                (LikelihoodMethod::FullInfo { n_draws: 2 }, 21u64),
                (LikelihoodMethod::Moments { order: 2 }, 22),
            ] {
                let est =
                    ProviderEstimator::new(provider.as_ref(), &hsim.x, Some(&hsim.micro), method)
                        .unwrap();
                push(est.loglik(&cal, seed).unwrap(), &mut bits);
            }
            bits
        })
    }

    let single = run_everything(1);
    let pooled = run_everything(4);
    assert_eq!(
        single.len(),
        pooled.len(),
        "worker counts produced different output shapes"
    );
    let diverging = single.iter().zip(&pooled).position(|(a, b)| a != b);
    assert_eq!(
        diverging, None,
        "outputs diverge between 1 and 4 workers at position {diverging:?}"
    );
    println!(
        "criterion 10: {} numbers bit-identical across worker counts",
        single.len()
    );
}
