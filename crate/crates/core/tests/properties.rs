//! Cross-module behavior checks: closed-form oracles, grid-search oracles,
//! distributional comparisons between samplers, and randomized properties
//! of the metric and resampling helpers.

mod common;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use statrs::distribution::ContinuousCDF;

use common::{
    mean, normal_draws, ridge_system, variance, GaussPhiLoss, GaussPhiSampler, RidgeDesign,
    ZeroEtaLoss,
};
use gencut_core::calibration::calibrate;
use gencut_core::diagnostics::{
    credible_set_mc, ks2, propagation_table, third_cumulant_decomposition,
    total_variance_decomposition, wasserstein1_1d,
};
use gencut_core::dist::MvNormalPrecision;
use gencut_core::laplace::{conditional_laplace, joint_laplace, marginal_laplace_phi};
use gencut_core::model::{
    EtaLoss, Flat, IndependentNormal, Module1, Module2, ObsTable, ParamVector, PhiLoss,
    SystemBuilder, TwoModuleSystem,
};
use gencut_core::models::hpv::{hpv_simulate, hpv_system, HpvLoss, HpvTruth};
use gencut_core::models::re::{re_simulate, re_system, tukey_ddrho, tukey_drho, tukey_rho, ReLoss, ReTruth};
use gencut_core::optim::solve_conditional_mode;
use gencut_core::samplers::{
    rwm_chain, sample_cut, sample_full, sir_indices, CutConfig, CutStrategy, FullConfig,
    McmcConfig, ProposalScale,
};
use gencut_core::semimodular::{sample_smi, SmiConfig};

// ---------------------------------------------------------------------------
// Kernel identities on concrete systems
// ---------------------------------------------------------------------------

struct BoxLoss;

impl PhiLoss for BoxLoss {
    fn eval(&self, _i: usize, _obs: &[f64], _phi: &[f64]) -> f64 {
        0.0
    }
}

impl EtaLoss for BoxLoss {
    fn eval(&self, _i: usize, _obs: &[f64], _eta: &[f64], _phi: &[f64]) -> f64 {
        0.0
    }
}

#[test]
fn zero_losses_and_flat_priors_give_zero_log_density() {
    let z = ObsTable::new(vec!["z".into()], vec![vec![1.0], vec![2.0]]).unwrap();
    let w = ObsTable::new(vec!["w".into()], vec![vec![0.5]]).unwrap();
    let sys = SystemBuilder::new(
        Module1 { data: z, loss: Arc::new(BoxLoss) },
        Module2 { data: w, loss: Arc::new(BoxLoss) },
        Arc::new(Flat),
        Arc::new(Flat),
        1,
        1,
    )
    .build()
    .unwrap();
    let theta = ParamVector::new(
        vec!["phi1".into(), "eta1".into()],
        vec![0.3, -4.0],
    )
    .unwrap();
    assert_eq!(sys.log_generalized_posterior(&theta).unwrap(), 0.0);
    assert_eq!(sys.log_cut_marginal_phi(&[0.3]).unwrap(), 0.0);
    assert_eq!(sys.log_conditional_eta(&[-4.0], &[0.3]).unwrap(), 0.0);
}

#[test]
fn ridge_kernels_match_hand_computed_densities() {
    let (sys, facts) = ridge_system(&RidgeDesign::default());
    let z = sys.module1_data();
    let w = sys.module2_data();
    let mut rng = ChaCha12Rng::seed_from_u64(99);
    for _ in 0..10 {
        let phi = facts.zbar + normal_draws(1, 0.0, 0.7, rng.next_u64())[0];
        let eta: Vec<f64> = (0..facts.d_eta)
            .map(|_| normal_draws(1, 0.0, 1.0, rng.next_u64())[0])
            .collect();

        let mut hand = 0.0;
        for i in 0..z.n_obs() {
            let r = z.row(i)[0] - phi;
            hand -= facts.nu * 0.5 * r * r / (facts.sigma1 * facts.sigma1);
        }
        for i in 0..w.n_obs() {
            for (k, e) in eta.iter().enumerate() {
                let r = w.row(i)[k] - e - facts.coupling * phi;
                hand -= facts.nu_prime
                    * (0.5 * r * r / (facts.sigma2 * facts.sigma2)
                        + 0.5 * e * e / (facts.n2 as f64 * facts.tau * facts.tau));
            }
        }
        let got = sys.log_generalized_posterior_parts(&[phi], &eta).unwrap();
        assert!((got - hand).abs() < 1e-9, "got {got}, hand {hand}");
    }
}

#[test]
fn conditional_posterior_matches_conjugate_closed_form() {
    let (sys, facts) = ridge_system(&RidgeDesign::default());
    // The exact conditional is Gaussian; compare the kernel's second
    // differences and location against the closed form at several phi.
    for phi in [facts.zbar - 0.5, facts.zbar, facts.zbar + 1.0] {
        let cond = conditional_laplace(&sys, &[phi], None).unwrap();
        let want_mean = facts.eta_mean(phi);
        for k in 0..facts.d_eta {
            assert!((cond.mean()[k] - want_mean[k]).abs() < 1e-8);
            assert!(
                (cond.precision()[(k, k)] - facts.eta_precision()).abs()
                    < 1e-6 * facts.eta_precision()
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Inner solver against a grid-search oracle
// ---------------------------------------------------------------------------

#[test]
fn hpv_conditional_mode_matches_a_refined_grid_search() {
    let data = hpv_simulate(13, &HpvTruth::default(), 11).unwrap();
    let sys = hpv_system(&data, HpvLoss::Poisson, 1.0, 1.0).unwrap();
    let phi: Vec<f64> = sys.phi_init().unwrap().iter().copied().collect();

    let solve = solve_conditional_mode(&sys, &phi, None).unwrap();
    assert!(solve.converged);

    // Three-stage grid refinement of the stage criterion over (eta1, eta2).
    let mut center = (-2.0, 12.5);
    let mut half = (4.0, 17.5);
    let mut best = (f64::NEG_INFINITY, center);
    for _stage in 0..3 {
        let n = 200usize;
        for i in 0..=n {
            for j in 0..=n {
                let e1 = center.0 - half.0 + 2.0 * half.0 * i as f64 / n as f64;
                let e2 = center.1 - half.1 + 2.0 * half.1 * j as f64 / n as f64;
                let v = sys.criterion_eta(&[e1, e2], &phi).unwrap();
                if v > best.0 {
                    best = (v, (e1, e2));
                }
            }
        }
        center = best.1;
        half = (4.0 * half.0 / n as f64, 4.0 * half.1 / n as f64);
    }

    assert!(
        (solve.eta_hat[0] - best.1 .0).abs() < 1e-4,
        "eta1: solver {} vs grid {}",
        solve.eta_hat[0],
        best.1 .0
    );
    assert!(
        (solve.eta_hat[1] - best.1 .1).abs() < 1e-4,
        "eta2: solver {} vs grid {}",
        solve.eta_hat[1],
        best.1 .1
    );
    // The solver's point is at least as good as the best grid point.
    let at_solver = sys.criterion_eta(&[solve.eta_hat[0], solve.eta_hat[1]], &phi).unwrap();
    assert!(at_solver >= best.0 - 1e-9);
}

#[test]
fn tukey_zero_residual_configuration_is_stationary() {
    let truth = ReTruth::default();
    let data = re_simulate(6, 5, &truth, 3).unwrap();
    let sys = re_system(&data, ReLoss::Tukey { kappa: 5.0 }, 1.0, 1.0).unwrap();
    // eta = (group means..., psi): every residual w' is zero, so the loss
    // gradient vanishes in every beta coordinate (and psi carries no loss).
    let mut eta = data.w();
    eta.push(1.0);
    let phi = vec![0.5; 6];
    let grad = sys.grad_criterion_eta(&eta, &phi).unwrap();
    for g in grad.iter() {
        assert!(g.abs() < 1e-8, "gradient entry {g}");
    }
}

// ---------------------------------------------------------------------------
// Laplace approximations on the survey model
// ---------------------------------------------------------------------------

#[test]
fn marginal_laplace_centers_at_the_survey_rates() {
    let data = hpv_simulate(13, &HpvTruth::default(), 21).unwrap();
    let sys = hpv_system(&data, HpvLoss::Poisson, 1.0, 1.0).unwrap();
    let marginal = marginal_laplace_phi(&sys, None).unwrap();
    for i in 0..13 {
        let p = data.z[i] / data.n[i];
        assert!(
            (marginal.mean()[i] - p).abs() < 1e-6,
            "country {i}: mean {} vs rate {p}",
            marginal.mean()[i]
        );
        let want_var = p * (1.0 - p) / data.n[i];
        let got_var = marginal.covariance()[(i, i)];
        assert!(
            (got_var - want_var).abs() < 0.02 * want_var,
            "country {i}: var {got_var} vs {want_var}"
        );
    }
}

#[test]
fn conditional_covariance_moves_with_phi_but_the_joint_block_is_fixed() {
    let data = hpv_simulate(13, &HpvTruth::default(), 31).unwrap();
    let sys = hpv_system(&data, HpvLoss::Poisson, 1.0, 1.0).unwrap();
    let anchor: Vec<f64> = (0..13).map(|i| data.z[i] / data.n[i]).collect();
    let low: Vec<f64> = anchor.iter().map(|p| 0.88 * p).collect();
    let high: Vec<f64> = anchor.iter().map(|p| (1.12 * p).min(0.95)).collect();

    let cov_low = conditional_laplace(&sys, &low, None).unwrap().covariance();
    let cov_mid = conditional_laplace(&sys, &anchor, None).unwrap().covariance();
    let cov_high = conditional_laplace(&sys, &high, None).unwrap().covariance();

    let dist = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a - b).norm();
    assert!(dist(&cov_low, &cov_mid) > 1e-8);
    assert!(dist(&cov_mid, &cov_high) > 1e-8);

    // The large-sample joint approximation freezes the conditional
    // covariance at the plug-in value from the cut mode.
    let joint = joint_laplace(&sys, None).unwrap();
    let frozen = joint.eta_conditional_covariance().unwrap();
    assert!(dist(&frozen, &cov_mid) < 1e-6 * cov_mid.norm());

    // Determinants computed from the precision agree with the covariance.
    for phi in [&low, &anchor, &high] {
        let cond = conditional_laplace(&sys, phi, None).unwrap();
        let det_from_precision = (-cond.log_det_precision()).exp();
        let det_cov = cond.covariance().determinant();
        assert!((det_from_precision - det_cov).abs() < 1e-8 * det_cov.abs().max(1e-12));
    }
}

// ---------------------------------------------------------------------------
// Propagation diagnostics on analytic toys
// ---------------------------------------------------------------------------

/// Module-2 loss whose conditional mode is `slope * phi` with constant
/// curvature: one scalar eta, residual (obs - eta + slope*phi).
struct LinearPullLoss {
    slope: f64,
    s2: f64,
}

impl EtaLoss for LinearPullLoss {
    fn eval(&self, _i: usize, obs: &[f64], eta: &[f64], phi: &[f64]) -> f64 {
        let r = obs[0] - eta[0] + self.slope * phi[0];
        0.5 * r * r / self.s2
    }

    fn grad_eta(&self, _i: usize, obs: &[f64], eta: &[f64], phi: &[f64]) -> Option<DVector<f64>> {
        let r = eta[0] - obs[0] - self.slope * phi[0];
        Some(DVector::from_vec(vec![r / self.s2]))
    }

    fn hess_eta(&self, _i: usize, _obs: &[f64], _eta: &[f64], _phi: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(1, 1, &[1.0 / self.s2]))
    }
}

fn linear_pull_system(slope: f64, cond_var: f64, n2: usize) -> TwoModuleSystem {
    let z = ObsTable::new(vec!["z".into()], vec![vec![0.0]]).unwrap();
    let w = ObsTable::new(vec!["w".into()], vec![vec![0.0]; n2]).unwrap();
    SystemBuilder::new(
        Module1 { data: z, loss: Arc::new(GaussPhiLoss { sigma1: 1.0 }) },
        Module2 {
            data: w,
            loss: Arc::new(LinearPullLoss { slope, s2: cond_var * n2 as f64 }),
        },
        Arc::new(Flat),
        Arc::new(Flat),
        1,
        1,
    )
    .build()
    .unwrap()
}

#[test]
fn linear_gaussian_toy_recovers_the_total_variance_split() {
    let slope = 0.7;
    let cond_var = 0.25;
    let sys = linear_pull_system(slope, cond_var, 5);

    let phis: Vec<DVector<f64>> = normal_draws(10_000, 0.2, 1.0, 41)
        .into_iter()
        .map(|p| DVector::from_vec(vec![p]))
        .collect();
    let table = propagation_table(&sys, &phis).unwrap();
    assert_eq!(table.n_failures, 0);

    let split = total_variance_decomposition(&table).unwrap();
    let phi_flat: Vec<f64> = phis.iter().map(|p| p[0]).collect();
    let want_between = slope * slope * variance(&phi_flat);

    // The conditional pieces are exact, so the split reproduces the toy's
    // moments to solver precision, and both land within 5% of the
    // population values.
    assert!((split.within[(0, 0)] - cond_var).abs() < 1e-8);
    assert!((split.between[(0, 0)] - want_between).abs() < 1e-6);
    let total_pop = slope * slope * 1.0 + cond_var;
    assert!((split.total[(0, 0)] - total_pop).abs() < 0.05 * total_pop);
}

/// Conditional mode phi^3 with unit curvature: residual (eta - phi^3).
struct CubicModeLoss;

impl EtaLoss for CubicModeLoss {
    fn eval(&self, _i: usize, _obs: &[f64], eta: &[f64], phi: &[f64]) -> f64 {
        let r = eta[0] - phi[0].powi(3);
        0.5 * r * r
    }

    fn grad_eta(&self, _i: usize, _obs: &[f64], eta: &[f64], phi: &[f64]) -> Option<DVector<f64>> {
        Some(DVector::from_vec(vec![eta[0] - phi[0].powi(3)]))
    }

    fn hess_eta(&self, _i: usize, _obs: &[f64], _eta: &[f64], _phi: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(1, 1, &[1.0]))
    }
}

#[test]
fn cubic_mode_toy_isolates_the_skewness_terms() {
    let z = ObsTable::new(vec!["z".into()], vec![vec![0.0]]).unwrap();
    let w = ObsTable::new(vec!["w".into()], vec![vec![0.0]]).unwrap();
    let sys = SystemBuilder::new(
        Module1 { data: z, loss: Arc::new(GaussPhiLoss { sigma1: 1.0 }) },
        Module2 { data: w, loss: Arc::new(CubicModeLoss) },
        Arc::new(Flat),
        Arc::new(Flat),
        1,
        1,
    )
    .build()
    .unwrap();

    let s = 20_000;
    let phis: Vec<DVector<f64>> = normal_draws(s, 0.0, 1.0, 17)
        .into_iter()
        .map(|p| DVector::from_vec(vec![p]))
        .collect();
    let table = propagation_table(&sys, &phis).unwrap();
    let cum = third_cumulant_decomposition(&table).unwrap();

    // Constant conditional variance: no mode/variance coupling at all.
    assert_eq!(cum.mode_variance_coupling[0], 0.0);

    // The skew part is the sample third central moment of the modes;
    // recompute it directly as an oracle.
    let mus: Vec<f64> = table.mu.iter().map(|m| m[0]).collect();
    let mbar = mean(&mus);
    let m3 = mus.iter().map(|m| (m - mbar).powi(3)).sum::<f64>() / s as f64;
    assert!((cum.mode_skew_part[0] - m3).abs() < 1e-9);

    // phi ~ N(0,1) makes the population third moment of phi^3 zero; the
    // estimate must sit within Monte Carlo error of zero.
    let m6 = mus.iter().map(|m| (m - mbar).powi(6)).sum::<f64>() / s as f64;
    let se = ((m6 - m3 * m3) / s as f64).sqrt();
    assert!(cum.mode_skew_part[0].abs() <= 3.0 * se);
}

#[test]
fn survey_model_couples_means_and_variances_with_opposite_signs() {
    let data = hpv_simulate(13, &HpvTruth::default(), 7).unwrap();
    let sys = hpv_system(&data, HpvLoss::Poisson, 1.0, 1.0).unwrap();
    let cut = sample_cut(
        &sys,
        &CutConfig {
            n_draws: 1500,
            seed: 7,
            strategy: CutStrategy::ConditionalNormal,
            phi_mcmc: None,
        },
    )
    .unwrap();

    let phis: Vec<DVector<f64>> = (0..cut.n_draws())
        .map(|i| DVector::from_iterator(13, (0..13).map(|j| cut.draws()[(i, j)])))
        .collect();
    let table = propagation_table(&sys, &phis).unwrap();

    let corr = |k: usize| {
        let mu: Vec<f64> = table.mu.iter().map(|m| m[k]).collect();
        let sd: Vec<f64> = table.sigma.iter().map(|s| s[(k, k)].sqrt()).collect();
        let (mm, ms) = (mean(&mu), mean(&sd));
        let num: f64 = mu.iter().zip(&sd).map(|(a, b)| (a - mm) * (b - ms)).sum();
        num / (variance(&mu).sqrt() * variance(&sd).sqrt()) / (mu.len() as f64 - 1.0)
    };

    // Larger fitted intercepts mean higher expected counts, hence more
    // curvature and tighter conditionals: a negative association for the
    // intercept. The slope moves the other way.
    let c1 = corr(0);
    let c2 = corr(1);
    assert!(c1 < -0.5, "intercept correlation {c1}");
    assert!(c2 > 0.5, "slope correlation {c2}");
}

// ---------------------------------------------------------------------------
// Credible-set Monte Carlo and whitening
// ---------------------------------------------------------------------------

fn correlated_precision(d: usize) -> MvNormalPrecision {
    let mut p = DMatrix::from_element(d, d, 0.3);
    for i in 0..d {
        p[(i, i)] = 2.0 + i as f64 * 0.5;
    }
    MvNormalPrecision::new(DVector::from_element(d, 1.5), p).unwrap()
}

#[test]
fn alpha_one_retains_nothing() {
    let normal = correlated_precision(2);
    let out = credible_set_mc(&normal, 1.0, 2000, 5).unwrap();
    assert_eq!(out.retained.len(), 0);
    assert_eq!(out.retention_rate, 0.0);
}

#[test]
fn whitened_draws_have_identity_covariance() {
    let normal = correlated_precision(3);
    let mut rng = ChaCha12Rng::seed_from_u64(123);
    let k = 100_000;
    let mut acc = DMatrix::zeros(3, 3);
    for _ in 0..k {
        let x = normal.sample(&mut rng);
        let y = normal.whiten(&x);
        acc += &y * y.transpose();
    }
    acc /= k as f64;
    for i in 0..3 {
        for j in 0..3 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!(
                (acc[(i, j)] - want).abs() < 0.02,
                "entry ({i},{j}) = {}",
                acc[(i, j)]
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Wasserstein distance
// ---------------------------------------------------------------------------

#[test]
fn wasserstein_detects_a_unit_location_shift() {
    let a = normal_draws(100_000, 0.0, 1.0, 51);
    let b = normal_draws(100_000, 1.0, 1.0, 52);
    let d = wasserstein1_1d(&a, &b).unwrap();
    assert!((d - 1.0).abs() < 0.02, "distance {d}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wasserstein_is_a_metric_on_empirical_samples(
        a in prop::collection::vec(-10.0f64..10.0, 1..30),
        b in prop::collection::vec(-10.0f64..10.0, 1..30),
        c in prop::collection::vec(-10.0f64..10.0, 1..30),
    ) {
        let dab = wasserstein1_1d(&a, &b).unwrap();
        let dba = wasserstein1_1d(&b, &a).unwrap();
        let dac = wasserstein1_1d(&a, &c).unwrap();
        let dcb = wasserstein1_1d(&c, &b).unwrap();
        let daa = wasserstein1_1d(&a, &a).unwrap();
        prop_assert!(daa.abs() < 1e-12);
        prop_assert!((dab - dba).abs() < 1e-12);
        prop_assert!(dab <= dac + dcb + 1e-9);
    }

    #[test]
    fn resampling_is_invariant_to_weight_shifts(
        weights in prop::collection::vec(-30.0f64..30.0, 1..50),
        shift in -50.0f64..50.0,
        seed in 0u64..1000,
    ) {
        let shifted: Vec<f64> = weights.iter().map(|w| w + shift).collect();
        let mut r1 = ChaCha12Rng::seed_from_u64(seed);
        let mut r2 = ChaCha12Rng::seed_from_u64(seed);
        let i1 = sir_indices(&weights, 40, &mut r1).unwrap();
        let i2 = sir_indices(&shifted, 40, &mut r2).unwrap();
        prop_assert_eq!(i1, i2);
    }

    #[test]
    fn biweight_is_smooth_at_the_branch_point(kappa in 0.1f64..100.0) {
        let below = tukey_rho(kappa * (1.0 - 1e-9), kappa);
        let above = tukey_rho(kappa * (1.0 + 1e-9), kappa);
        let at = kappa * kappa / 6.0;
        prop_assert!((below - at).abs() < 1e-7 * at.max(1.0));
        prop_assert!((above - at).abs() < 1e-12 * at.max(1.0));
        // First derivative vanishes at the threshold from both sides.
        prop_assert!(tukey_drho(kappa * (1.0 - 1e-9), kappa).abs() < 1e-6 * kappa);
        prop_assert_eq!(tukey_drho(kappa * (1.0 + 1e-9), kappa), 0.0);
        // Second derivative is bounded and finite near the threshold.
        prop_assert!(tukey_ddrho(kappa * (1.0 - 1e-9), kappa).is_finite());
    }

    #[test]
    fn simulators_are_seed_deterministic(seed in 0u64..500) {
        let a = hpv_simulate(5, &HpvTruth::default(), seed).unwrap();
        let b = hpv_simulate(5, &HpvTruth::default(), seed).unwrap();
        prop_assert_eq!(a.z, b.z);
        prop_assert_eq!(a.n, b.n);
        prop_assert_eq!(a.w, b.w);
        prop_assert_eq!(a.t, b.t);
        let c = re_simulate(4, 3, &ReTruth::default(), seed).unwrap();
        let d = re_simulate(4, 3, &ReTruth::default(), seed).unwrap();
        prop_assert_eq!(c.rows(), d.rows());
    }
}

// ---------------------------------------------------------------------------
// Resampling and random-walk behavior
// ---------------------------------------------------------------------------

#[test]
fn uniform_weights_resample_uniformly() {
    let k = 20usize;
    let weights = vec![0.0f64; k];
    let n = 100_000usize;
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    let idx = sir_indices(&weights, n, &mut rng).unwrap();
    let mut counts = vec![0usize; k];
    for i in idx {
        counts[i] += 1;
    }
    let expected = n as f64 / k as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let chi2 = statrs::distribution::ChiSquared::new((k - 1) as f64).unwrap();
    let p = 1.0 - chi2.cdf(stat);
    assert!(p > 0.01, "chi-square stat {stat}, p {p}");
}

#[test]
fn a_lone_finite_weight_is_always_selected() {
    let weights = vec![f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY];
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let idx = sir_indices(&weights, 25, &mut rng).unwrap();
    assert!(idx.iter().all(|&i| i == 2));
}

#[test]
fn vanishing_proposal_scale_freezes_the_chain() {
    let config = McmcConfig {
        steps: 3000,
        burn_in: 0,
        thin: 1,
        proposal_scale: ProposalScale::Scalar(1e-9),
        seed: 77,
        adapt: false,
    };
    let init = DVector::from_vec(vec![0.4]);
    let mut rng = ChaCha12Rng::seed_from_u64(77);
    let res = rwm_chain(|x: &[f64]| Ok(-0.5 * x[0] * x[0]), &init, &config, &mut rng).unwrap();
    assert!(res.acceptance_rate > 0.999, "acceptance {}", res.acceptance_rate);
    let max_move = res
        .samples
        .iter()
        .map(|s| (s[0] - 0.4f64).abs())
        .fold(0.0f64, f64::max);
    assert!(max_move < 1e-5, "max movement {max_move}");
}

// ---------------------------------------------------------------------------
// Cut and full samplers under degenerate module 2
// ---------------------------------------------------------------------------

fn prior_only_system() -> TwoModuleSystem {
    let z_values = normal_draws(30, 0.8, 1.0, 61);
    let zbar = mean(&z_values);
    let z = ObsTable::new(vec!["z".into()], z_values.iter().map(|v| vec![*v]).collect()).unwrap();
    let w = ObsTable::new(vec!["w".into()], vec![vec![0.0]; 10]).unwrap();
    SystemBuilder::new(
        Module1 { data: z, loss: Arc::new(GaussPhiLoss { sigma1: 1.0 }) },
        Module2 { data: w, loss: Arc::new(ZeroEtaLoss) },
        Arc::new(Flat),
        Arc::new(IndependentNormal::isotropic(1, 3.0, 0.7)),
        1,
        1,
    )
    .phi_sampler(Arc::new(GaussPhiSampler { zbar, n1: 30.0, sigma1: 1.0 }))
    .phi_init(vec![zbar])
    .build()
    .unwrap()
}

#[test]
fn zero_module_two_loss_draws_eta_from_the_conditional_prior() {
    let sys = prior_only_system();
    let cut = sample_cut(
        &sys,
        &CutConfig {
            n_draws: 500,
            seed: 13,
            strategy: CutStrategy::NestedMcmc { steps: 400, burn_in: 150 },
            phi_mcmc: None,
        },
    )
    .unwrap();
    let eta = cut.column("eta1").unwrap();
    assert!((mean(&eta) - 3.0).abs() < 0.1, "eta mean {}", mean(&eta));
    let sd = variance(&eta).sqrt();
    assert!((0.6..=0.8).contains(&sd), "eta sd {sd}");
}

#[test]
fn full_sampler_with_zero_module_two_loss_matches_the_cut_marginal() {
    let sys = prior_only_system();
    let cut = sample_cut(
        &sys,
        &CutConfig {
            n_draws: 800,
            seed: 29,
            strategy: CutStrategy::NestedMcmc { steps: 300, burn_in: 120 },
            phi_mcmc: None,
        },
    )
    .unwrap();
    let full = sample_full(
        &sys,
        &FullConfig {
            n_draws: 800,
            mcmc: McmcConfig {
                steps: 0, // derived from thin and draw count inside
                burn_in: 4000,
                thin: 40,
                proposal_scale: ProposalScale::Scalar(0.3),
                seed: 30,
                adapt: true,
            },
            init: None,
        },
    )
    .unwrap();
    let a = cut.column("phi1").unwrap();
    let b = full.column("phi1").unwrap();
    let (_, p) = ks2(&a, &b).unwrap();
    assert!(p > 0.01, "KS p-value {p}");
}

// ---------------------------------------------------------------------------
// Semi-modular interpolation
// ---------------------------------------------------------------------------

#[test]
fn intermediate_gamma_interpolates_between_cut_and_full() {
    let design = RidgeDesign { w_bias: 3.0, seed: 23, ..RidgeDesign::default() };
    let (sys, facts) = ridge_system(&design);

    let smi = sample_smi(
        &sys,
        &SmiConfig {
            eta: CutStrategy::ConditionalNormal,
            ..SmiConfig::new(
                0.5,
                1000,
                McmcConfig {
                    steps: 0,
                    burn_in: 1500,
                    thin: 10,
                    proposal_scale: ProposalScale::Scalar(0.2),
                    seed: 3,
                    adapt: true,
                },
            )
        },
    )
    .unwrap();
    let got = mean(&smi.column("phi1").unwrap());

    let (cut_mean, _) = facts.cut_phi();
    let (full_mean, _) = facts.full_phi();
    let (smi_mean, smi_var) = facts.smi_phi(0.5);

    // The sampled mean must match the closed form and sit strictly between
    // the cut and full means.
    let se = (smi_var / 250.0).sqrt(); // conservative effective sample size
    assert!(
        (got - smi_mean).abs() < 4.0 * se,
        "smi mean {got} vs analytic {smi_mean} (se {se})"
    );
    assert!(cut_mean < full_mean, "design should bias the full posterior upward");
    assert!(got > cut_mean + 2.0 * se && got < full_mean - 2.0 * se);
}

// ---------------------------------------------------------------------------
// Benchmark model identities
// ---------------------------------------------------------------------------

#[test]
fn unit_dispersion_quasi_loss_is_the_poisson_loss() {
    let data = hpv_simulate(13, &HpvTruth::default(), 43).unwrap();
    let poisson = hpv_system(&data, HpvLoss::Poisson, 1.0, 1.0).unwrap();
    let quasi = hpv_system(&data, HpvLoss::Quasi { overdispersion: 1.0 }, 1.0, 1.0).unwrap();
    let phi: Vec<f64> = (0..13).map(|i| data.z[i] / data.n[i]).collect();
    for eta in [[-2.0, 13.0], [-1.0, 5.0], [-3.5, 20.0]] {
        let a = poisson.criterion_eta(&eta, &phi).unwrap();
        let b = quasi.criterion_eta(&eta, &phi).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn huge_threshold_biweight_matches_the_gaussian_loss() {
    let data = re_simulate(4, 6, &ReTruth::default(), 19).unwrap();
    let gaussian = re_system(&data, ReLoss::Gaussian, 1.0, 1.0).unwrap();
    let tukey = re_system(&data, ReLoss::Tukey { kappa: 1e6 }, 1.0, 1.0).unwrap();
    let phi = vec![0.6; 4];
    // Group means keep |w'| well under 10 at these etas.
    let mut eta = data.w();
    eta.push(0.9);
    for shift in [0.0, 0.5, -1.2, 2.0] {
        let shifted: Vec<f64> = eta
            .iter()
            .enumerate()
            .map(|(i, v)| if i < 4 { v + shift } else { *v })
            .collect();
        let a = gaussian.criterion_eta(&shifted, &phi).unwrap();
        let b = tukey.criterion_eta(&shifted, &phi).unwrap();
        assert!((a - b).abs() < 1e-6, "shift {shift}: {a} vs {b}");
    }
}

#[test]
fn sufficient_statistics_reproduce_raw_data_inference() {
    let truth = ReTruth { psi: 1.0, phi: 0.8, beta_overrides: vec![(0, 2.0)] };
    let data = re_simulate(3, 4, &truth, 37).unwrap();
    let sys = re_system(&data, ReLoss::Gaussian, 1.0, 1.0).unwrap();

    // nu L + nu' M from the system, versus the raw-data Gaussian
    // log-likelihood; their difference must not depend on the parameters.
    let loss_parts = |phi: &[f64], eta: &[f64]| {
        let joint = sys.log_generalized_posterior_parts(phi, eta).unwrap();
        let priors = sys.phi_prior().log_density(phi) + sys.eta_prior().log_density(eta, phi);
        joint - priors
    };
    let raw_loglik = |phi: &[f64], beta: &[f64]| {
        let mut total = 0.0;
        for (i, row) in data.rows().iter().enumerate() {
            for y in row {
                let r = y - beta[i];
                total += -0.5 * (2.0 * std::f64::consts::PI * phi[i] * phi[i]).ln()
                    - 0.5 * r * r / (phi[i] * phi[i]);
            }
        }
        total
    };

    let points = [
        (vec![0.8, 0.7, 0.9], vec![2.0, 0.1, -0.3, 1.0]),
        (vec![0.5, 1.2, 0.6], vec![1.5, -0.5, 0.2, 0.7]),
        (vec![1.1, 0.9, 1.4], vec![2.5, 0.4, 0.1, 1.3]),
    ];
    let mut gaps = Vec::new();
    for (phi, eta) in &points {
        let beta = &eta[..3];
        gaps.push(loss_parts(phi, eta) - raw_loglik(phi, beta));
    }
    for g in &gaps[1..] {
        assert!(
            (g - gaps[0]).abs() < 1e-9,
            "gap varies with the parameters: {gaps:?}"
        );
    }
}

// ---------------------------------------------------------------------------
// Calibration scale equivariance
// ---------------------------------------------------------------------------

struct ScaledEtaLoss<L: EtaLoss> {
    inner: L,
    factor: f64,
}

impl<L: EtaLoss> EtaLoss for ScaledEtaLoss<L> {
    fn eval(&self, i: usize, obs: &[f64], eta: &[f64], phi: &[f64]) -> f64 {
        self.factor * self.inner.eval(i, obs, eta, phi)
    }
}

#[test]
fn rescaling_the_loss_inversely_rescales_the_calibrated_rate() {
    let w_values = normal_draws(60, 1.4, 0.9, 71);
    let make = |factor: f64| {
        let z = ObsTable::new(
            vec!["z".into()],
            normal_draws(40, 0.2, 1.0, 70).iter().map(|v| vec![*v]).collect(),
        )
        .unwrap();
        let w = ObsTable::new(vec!["w".into()], w_values.iter().map(|v| vec![*v]).collect())
            .unwrap();
        SystemBuilder::new(
            Module1 { data: z, loss: Arc::new(GaussPhiLoss { sigma1: 1.0 }) },
            Module2 {
                data: w,
                loss: Arc::new(ScaledEtaLoss {
                    inner: LinearPullLoss { slope: 0.0, s2: 1.0 },
                    factor,
                }),
            },
            Arc::new(Flat),
            Arc::new(Flat),
            1,
            1,
        )
        .phi_init(vec![0.0])
        .build()
        .unwrap()
    };

    let base = calibrate(&make(1.0)).unwrap();
    let scaled = calibrate(&make(4.0)).unwrap();

    // Module 1 is untouched; module 2's rate compensates the scaling so
    // that nu' * M is invariant.
    assert!((scaled.nu - base.nu).abs() < 1e-8 * base.nu.abs());
    let ratio = scaled.nu_prime / base.nu_prime;
    assert!(
        (ratio - 0.25).abs() < 1e-5,
        "rate ratio {ratio} (base {}, scaled {})",
        base.nu_prime,
        scaled.nu_prime
    );
}
