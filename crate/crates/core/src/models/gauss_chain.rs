//! A fully conjugate Gaussian chain model, mainly a test bench.
//!
//! Module 1: `z_i ~ N(phi, sigma1^2)`, scalar phi. Module 2:
//! `w_i ~ N(eta + a * phi * 1, sigma2^2 I)` with eta of any dimension and a
//! known coupling coefficient `a`. Both losses are exact negative log
//! densities up to constants, and both priors are flat, so every posterior
//! quantity has a closed form: the cut marginal of phi is normal, the
//! conditional of eta given phi is normal, and the plug-in evidence
//! identity is exact.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{
    EtaLoss, Flat, Module1, Module2, ObsTable, PhiDirectSampler, PhiLoss, TwoModuleSystem,
};
use crate::seeding::{substream, Domain};

/// Model constants shared by both modules.
#[derive(Debug, Clone)]
pub struct GaussChainSettings {
    pub sigma1: f64,
    pub sigma2: f64,
    /// Coupling of phi into the mean of the second module.
    pub coupling: f64,
    pub d_eta: usize,
}

impl Default for GaussChainSettings {
    fn default() -> Self {
        Self { sigma1: 1.0, sigma2: 1.0, coupling: 1.0, d_eta: 1 }
    }
}

impl GaussChainSettings {
    fn validate(&self) -> Result<()> {
        if !(self.sigma1.is_finite() && self.sigma1 > 0.0)
            || !(self.sigma2.is_finite() && self.sigma2 > 0.0)
        {
            return Err(Error::invalid("noise scales must be positive and finite"));
        }
        if !self.coupling.is_finite() {
            return Err(Error::invalid("the coupling coefficient must be finite"));
        }
        if self.d_eta == 0 {
            return Err(Error::invalid("d_eta must be at least 1"));
        }
        Ok(())
    }
}

struct ChainLoss1 {
    sigma1: f64,
}

impl PhiLoss for ChainLoss1 {
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

struct ChainLoss2 {
    sigma2: f64,
    coupling: f64,
}

impl EtaLoss for ChainLoss2 {
    fn eval(&self, _i: usize, obs: &[f64], eta: &[f64], phi: &[f64]) -> f64 {
        let shift = self.coupling * phi[0];
        let mut ss = 0.0;
        for (k, e) in eta.iter().enumerate() {
            let r = obs[k] - e - shift;
            ss += r * r;
        }
        0.5 * ss / (self.sigma2 * self.sigma2)
    }

    fn grad_eta(&self, _i: usize, obs: &[f64], eta: &[f64], phi: &[f64]) -> Option<DVector<f64>> {
        let shift = self.coupling * phi[0];
        let v2 = self.sigma2 * self.sigma2;
        Some(DVector::from_iterator(
            eta.len(),
            eta.iter().enumerate().map(|(k, e)| (e + shift - obs[k]) / v2),
        ))
    }

    fn hess_eta(&self, _i: usize, _obs: &[f64], eta: &[f64], _phi: &[f64]) -> Option<DMatrix<f64>> {
        let v2 = self.sigma2 * self.sigma2;
        Some(DMatrix::from_diagonal(&DVector::from_element(eta.len(), 1.0 / v2)))
    }
}

/// Exact sampler for the cut marginal of phi: `N(zbar, sigma1^2/(nu n1))`.
struct ChainPhiSampler {
    zbar: f64,
    n1: f64,
    sigma1: f64,
}

impl PhiDirectSampler for ChainPhiSampler {
    fn sample(&self, nu: f64, rng: &mut dyn RngCore) -> DVector<f64> {
        let sd = (self.sigma1 * self.sigma1 / (nu * self.n1)).sqrt();
        let z: f64 = rng.sample(StandardNormal);
        DVector::from_vec(vec![self.zbar + sd * z])
    }
}

/// Build the system from observation tables. The first table needs a `z`
/// column; the second needs `w1..w{d_eta}` columns.
pub fn gauss_chain_system(
    z: ObsTable,
    w: ObsTable,
    settings: &GaussChainSettings,
    nu: f64,
    nu_prime: f64,
) -> Result<TwoModuleSystem> {
    settings.validate()?;
    if z.columns() != ["z".to_string()] {
        return Err(Error::invalid("module-1 table must have exactly one column named z"));
    }
    let expected: Vec<String> = (1..=settings.d_eta).map(|k| format!("w{k}")).collect();
    if w.columns() != expected.as_slice() {
        return Err(Error::invalid(format!(
            "module-2 table must have columns {expected:?}"
        )));
    }
    let n1 = z.n_obs() as f64;
    let zbar = (0..z.n_obs()).map(|i| z.row(i)[0]).sum::<f64>() / n1;
    let n2 = w.n_obs() as f64;
    let mut wbar = vec![0.0; settings.d_eta];
    for i in 0..w.n_obs() {
        for (k, v) in w.row(i).iter().enumerate() {
            wbar[k] += v;
        }
    }
    for v in &mut wbar {
        *v /= n2;
    }
    let eta_init: Vec<f64> =
        wbar.iter().map(|v| v - settings.coupling * zbar).collect();
    let eta_names: Vec<String> = (1..=settings.d_eta).map(|k| format!("eta{k}")).collect();

    TwoModuleSystem::builder(
        Module1 { data: z, loss: Arc::new(ChainLoss1 { sigma1: settings.sigma1 }) },
        Module2 {
            data: w,
            loss: Arc::new(ChainLoss2 {
                sigma2: settings.sigma2,
                coupling: settings.coupling,
            }),
        },
        Arc::new(Flat),
        Arc::new(Flat),
        1,
        settings.d_eta,
    )
    .phi_names(vec!["phi1".to_string()])
    .eta_names(eta_names)
    .rates(nu, nu_prime)
    .phi_sampler(Arc::new(ChainPhiSampler { zbar, n1, sigma1: settings.sigma1 }))
    .phi_init(vec![zbar])
    .eta_init(eta_init)
    .build()
}

/// Simulate both modules at the given truth.
pub fn gauss_chain_simulate(
    n1: usize,
    n2: usize,
    phi_true: f64,
    eta_true: &[f64],
    settings: &GaussChainSettings,
    seed: u64,
) -> Result<(ObsTable, ObsTable)> {
    settings.validate()?;
    if eta_true.len() != settings.d_eta {
        return Err(Error::invalid("eta_true length does not match d_eta"));
    }
    if n1 == 0 || n2 == 0 {
        return Err(Error::invalid("both modules need at least one observation"));
    }
    let mut rng = substream(seed, Domain::Simulate, 0);
    let z_rows: Vec<Vec<f64>> = (0..n1)
        .map(|_| {
            let e: f64 = rng.sample(StandardNormal);
            vec![phi_true + settings.sigma1 * e]
        })
        .collect();
    let w_rows: Vec<Vec<f64>> = (0..n2)
        .map(|_| {
            eta_true
                .iter()
                .map(|eta_k| {
                    let e: f64 = rng.sample(StandardNormal);
                    eta_k + settings.coupling * phi_true + settings.sigma2 * e
                })
                .collect()
        })
        .collect();
    let z = ObsTable::new(vec!["z".to_string()], z_rows)?;
    let w = ObsTable::new(
        (1..=settings.d_eta).map(|k| format!("w{k}")).collect(),
        w_rows,
    )?;
    Ok((z, w))
}
