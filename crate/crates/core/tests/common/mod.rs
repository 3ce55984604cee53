//! Shared fixtures for the integration tests.
//!
//! The main one is a fully conjugate Gaussian chain with a ridge on eta:
//! module 1 observes `z_i ~ N(phi, sigma1^2)`, module 2 observes
//! `w_ik ~ N(eta_k + coupling*phi, sigma2^2)` and adds a quadratic penalty
//! `||eta||^2 / (2 tau^2)` spread evenly over the observations. Every
//! quantity the samplers estimate (cut, full, and semi-modular marginals,
//! the conditional posterior, and the module-2 evidence) has a closed form,
//! recorded in [`RidgeFacts`].

#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use gencut_core::model::{
    EtaLoss, Flat, Module1, Module2, ObsTable, PhiDirectSampler, PhiLoss, SystemBuilder,
    TwoModuleSystem,
};

/// Scalar Gaussian location loss for module 1.
pub struct GaussPhiLoss {
    pub sigma1: f64,
}

impl PhiLoss for GaussPhiLoss {
    fn eval(&self, _i: usize, obs: &[f64], phi: &[f64]) -> f64 {
        let r = obs[0] - phi[0];
        0.5 * r * r / (self.sigma1 * self.sigma1)
    }

    fn grad(&self, _i: usize, obs: &[f64], phi: &[f64]) -> Option<DVector<f64>> {
        Some(DVector::from_vec(vec![(phi[0] - obs[0]) / (self.sigma1 * self.sigma1)]))
    }

    fn hess(&self, _i: usize, _obs: &[f64], _phi: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(1, 1, &[1.0 / (self.sigma1 * self.sigma1)]))
    }
}

/// Exact sampler for the cut marginal `N(zbar, sigma1^2 / (nu n1))`.
pub struct GaussPhiSampler {
    pub zbar: f64,
    pub n1: f64,
    pub sigma1: f64,
}

impl PhiDirectSampler for GaussPhiSampler {
    fn sample(&self, nu: f64, rng: &mut dyn RngCore) -> DVector<f64> {
        let sd = (self.sigma1 * self.sigma1 / (nu * self.n1)).sqrt();
        let e: f64 = rng.sample(StandardNormal);
        DVector::from_vec(vec![self.zbar + sd * e])
    }
}

/// Module-2 loss: squared error around `eta + coupling*phi` plus an even
/// share of the ridge `||eta||^2 / (2 tau^2)`.
pub struct RidgeEtaLoss {
    pub sigma2: f64,
    pub coupling: f64,
    pub tau: f64,
    pub n2: f64,
}

impl EtaLoss for RidgeEtaLoss {
    fn eval(&self, _i: usize, obs: &[f64], eta: &[f64], phi: &[f64]) -> f64 {
        let shift = self.coupling * phi[0];
        let v2 = self.sigma2 * self.sigma2;
        let mut total = 0.0;
        for (k, e) in eta.iter().enumerate() {
            let r = obs[k] - e - shift;
            total += 0.5 * r * r / v2 + 0.5 * e * e / (self.n2 * self.tau * self.tau);
        }
        total
    }

    fn grad_eta(&self, _i: usize, obs: &[f64], eta: &[f64], phi: &[f64]) -> Option<DVector<f64>> {
        let shift = self.coupling * phi[0];
        let v2 = self.sigma2 * self.sigma2;
        let ridge = self.n2 * self.tau * self.tau;
        Some(DVector::from_iterator(
            eta.len(),
            eta.iter().enumerate().map(|(k, e)| (e + shift - obs[k]) / v2 + e / ridge),
        ))
    }

    fn hess_eta(&self, _i: usize, _obs: &[f64], eta: &[f64], _phi: &[f64]) -> Option<DMatrix<f64>> {
        let v2 = self.sigma2 * self.sigma2;
        let ridge = self.n2 * self.tau * self.tau;
        Some(DMatrix::from_diagonal(&DVector::from_element(eta.len(), 1.0 / v2 + 1.0 / ridge)))
    }
}

/// A module-2 loss that is identically zero (module 2 carries no data
/// information; the conditional posterior is the conditional prior).
pub struct ZeroEtaLoss;

impl EtaLoss for ZeroEtaLoss {
    fn eval(&self, _i: usize, _obs: &[f64], _eta: &[f64], _phi: &[f64]) -> f64 {
        0.0
    }
}

/// Closed forms for the ridge system, computed from the realized data.
pub struct RidgeFacts {
    pub sigma1: f64,
    pub sigma2: f64,
    pub tau: f64,
    pub coupling: f64,
    pub n1: usize,
    pub n2: usize,
    pub d_eta: usize,
    pub nu: f64,
    pub nu_prime: f64,
    pub zbar: f64,
    pub wbar: Vec<f64>,
    /// Per-coordinate within-sample sum of squares of w.
    pub ss: Vec<f64>,
}

impl RidgeFacts {
    /// Conditional posterior precision of each eta coordinate given phi
    /// (it does not depend on phi).
    pub fn eta_precision(&self) -> f64 {
        self.nu_prime * (self.n2 as f64 / (self.sigma2 * self.sigma2) + 1.0 / (self.tau * self.tau))
    }

    /// Conditional posterior mean of eta given phi.
    pub fn eta_mean(&self, phi: f64) -> Vec<f64> {
        let a = self.eta_precision();
        let gain = self.nu_prime * self.n2 as f64 / (self.sigma2 * self.sigma2) / a;
        self.wbar.iter().map(|w| gain * (w - self.coupling * phi)).collect()
    }

    /// Exact log evidence of module 2 at phi,
    /// `ln integral exp(nu_prime * M(eta, phi)) d eta` under the flat prior.
    pub fn log_m(&self, phi: f64) -> f64 {
        let a = self.eta_precision();
        let n2 = self.n2 as f64;
        let v2 = self.sigma2 * self.sigma2;
        let mut total = 0.0;
        for k in 0..self.d_eta {
            let mu = self.wbar[k] - self.coupling * phi;
            let g = self.nu_prime * n2 * mu / v2;
            total += 0.5 * (2.0 * std::f64::consts::PI / a).ln() + g * g / (2.0 * a)
                - self.nu_prime * n2 * mu * mu / (2.0 * v2)
                - self.nu_prime * self.ss[k] / (2.0 * v2);
        }
        total
    }

    /// Mean and variance of the cut marginal of phi.
    pub fn cut_phi(&self) -> (f64, f64) {
        let p = self.nu * self.n1 as f64 / (self.sigma1 * self.sigma1);
        (self.zbar, 1.0 / p)
    }

    /// Mean and variance of the semi-modular marginal of phi at `gamma`
    /// (gamma = 1 is the full posterior marginal, gamma = 0 the cut one).
    pub fn smi_phi(&self, gamma: f64) -> (f64, f64) {
        let a = self.eta_precision();
        let n2 = self.n2 as f64;
        let v2 = self.sigma2 * self.sigma2;
        let w_eff = (self.nu_prime * n2 / v2) * (self.nu_prime / (self.tau * self.tau)) / a;
        let p_cut = self.nu * self.n1 as f64 / (self.sigma1 * self.sigma1);
        let c = self.coupling;
        let p = p_cut + gamma * w_eff * c * c * self.d_eta as f64;
        let wsum: f64 = self.wbar.iter().sum();
        let mean = (p_cut * self.zbar + gamma * w_eff * c * wsum) / p;
        (mean, 1.0 / p)
    }

    pub fn full_phi(&self) -> (f64, f64) {
        self.smi_phi(1.0)
    }
}

/// Tuning knobs for [`ridge_system`]; `Default` gives a well-conditioned
/// moderately coupled system.
pub struct RidgeDesign {
    pub n1: usize,
    pub n2: usize,
    pub d_eta: usize,
    pub sigma1: f64,
    pub sigma2: f64,
    pub tau: f64,
    pub coupling: f64,
    pub nu: f64,
    pub nu_prime: f64,
    pub phi_true: f64,
    pub eta_true: Vec<f64>,
    /// Constant added to every w observation; pushes the full posterior for
    /// phi away from the cut posterior (module-2 misspecification).
    pub w_bias: f64,
    pub seed: u64,
}

impl Default for RidgeDesign {
    fn default() -> Self {
        Self {
            n1: 40,
            n2: 25,
            d_eta: 2,
            sigma1: 1.0,
            sigma2: 1.0,
            tau: 0.8,
            coupling: 1.0,
            nu: 1.0,
            nu_prime: 1.0,
            phi_true: 0.3,
            eta_true: vec![0.5, -0.4],
            w_bias: 0.0,
            seed: 20,
        }
    }
}

/// Build the ridge system on freshly simulated data and return it together
/// with the closed-form facts for the realized sample.
pub fn ridge_system(design: &RidgeDesign) -> (TwoModuleSystem, RidgeFacts) {
    assert_eq!(design.eta_true.len(), design.d_eta);
    let mut rng = ChaCha12Rng::seed_from_u64(design.seed);
    let z_rows: Vec<Vec<f64>> = (0..design.n1)
        .map(|_| {
            let e: f64 = rng.sample(StandardNormal);
            vec![design.phi_true + design.sigma1 * e]
        })
        .collect();
    let w_rows: Vec<Vec<f64>> = (0..design.n2)
        .map(|_| {
            design
                .eta_true
                .iter()
                .map(|eta_k| {
                    let e: f64 = rng.sample(StandardNormal);
                    eta_k + design.coupling * design.phi_true + design.w_bias + design.sigma2 * e
                })
                .collect()
        })
        .collect();

    let zbar = z_rows.iter().map(|r| r[0]).sum::<f64>() / design.n1 as f64;
    let wbar: Vec<f64> = (0..design.d_eta)
        .map(|k| w_rows.iter().map(|r| r[k]).sum::<f64>() / design.n2 as f64)
        .collect();
    let ss: Vec<f64> = (0..design.d_eta)
        .map(|k| w_rows.iter().map(|r| (r[k] - wbar[k]).powi(2)).sum::<f64>())
        .collect();

    let z = ObsTable::new(vec!["z".to_string()], z_rows).unwrap();
    let w = ObsTable::new((1..=design.d_eta).map(|k| format!("w{k}")).collect(), w_rows).unwrap();

    let facts = RidgeFacts {
        sigma1: design.sigma1,
        sigma2: design.sigma2,
        tau: design.tau,
        coupling: design.coupling,
        n1: design.n1,
        n2: design.n2,
        d_eta: design.d_eta,
        nu: design.nu,
        nu_prime: design.nu_prime,
        zbar,
        wbar: wbar.clone(),
        ss,
    };

    let eta_init = facts.eta_mean(zbar);
    let sys = SystemBuilder::new(
        Module1 {
            data: z,
            loss: Arc::new(GaussPhiLoss { sigma1: design.sigma1 }),
        },
        Module2 {
            data: w,
            loss: Arc::new(RidgeEtaLoss {
                sigma2: design.sigma2,
                coupling: design.coupling,
                tau: design.tau,
                n2: design.n2 as f64,
            }),
        },
        Arc::new(Flat),
        Arc::new(Flat),
        1,
        design.d_eta,
    )
    .phi_names(vec!["phi1".to_string()])
    .eta_names((1..=design.d_eta).map(|k| format!("eta{k}")).collect())
    .rates(design.nu, design.nu_prime)
    .phi_sampler(Arc::new(GaussPhiSampler {
        zbar,
        n1: design.n1 as f64,
        sigma1: design.sigma1,
    }))
    .phi_init(vec![zbar])
    .eta_init(eta_init)
    .build()
    .unwrap();

    (sys, facts)
}

/// Standard normal draws from a fixed-seed generator.
pub fn normal_draws(n: usize, mean: f64, sd: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let e: f64 = rng.sample(StandardNormal);
            mean + sd * e
        })
        .collect()
}

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with denominator n - 1.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}
