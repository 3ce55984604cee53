//! Binomial prevalence surveys linked to Poisson incidence counts.
//!
//! Module 1: per-country survey counts `z_i ~ Binomial(N_i, phi_i)` with
//! independent uniform priors on the prevalences, so the cut marginal of
//! each `phi_i` is conjugate: `Beta(nu z_i + 1, nu (N_i - z_i) + 1)`.
//!
//! Module 2: incidence counts `w_i ~ Poisson(T_i exp(eta1 + eta2 phi_i))`
//! over `T_i` (thousands of) woman-years. The loss is the Poisson negative
//! log kernel, or the same kernel divided by an overdispersion factor for a
//! quasi-likelihood analysis.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::{Beta, Binomial, Distribution, Poisson};

use crate::error::{Error, Result};
use crate::model::{
    EtaLoss, Flat, Module1, Module2, ObsTable, PhiDirectSampler, PhiLoss, TwoModuleSystem,
    UnitCube,
};
use crate::seeding::{substream, Domain};

/// Per-country counts: survey positives `z` of `n` tested, cancer cases `w`
/// over `t` thousand woman-years.
#[derive(Debug, Clone)]
pub struct HpvData {
    pub z: Vec<f64>,
    pub n: Vec<f64>,
    pub w: Vec<f64>,
    pub t: Vec<f64>,
}

impl HpvData {
    pub fn new(z: Vec<f64>, n: Vec<f64>, w: Vec<f64>, t: Vec<f64>) -> Result<Self> {
        let data = Self { z, n, w, t };
        data.validate()?;
        Ok(data)
    }

    pub fn n_countries(&self) -> usize {
        self.z.len()
    }

    fn validate(&self) -> Result<()> {
        let k = self.z.len();
        if k == 0 {
            return Err(Error::invalid("need at least one country"));
        }
        if self.n.len() != k || self.w.len() != k || self.t.len() != k {
            return Err(Error::invalid("z, n, w, t must have equal lengths"));
        }
        for i in 0..k {
            let (z, n, w, t) = (self.z[i], self.n[i], self.w[i], self.t[i]);
            if !(z.is_finite() && n.is_finite() && w.is_finite() && t.is_finite()) {
                return Err(Error::invalid(format!("non-finite value in row {i}")));
            }
            if n < 1.0 || z < 0.0 || z > n {
                return Err(Error::invalid(format!(
                    "row {i}: need 0 <= z <= n with n >= 1, got z={z}, n={n}"
                )));
            }
            if w < 0.0 || t <= 0.0 {
                return Err(Error::invalid(format!(
                    "row {i}: need w >= 0 and t > 0, got w={w}, t={t}"
                )));
            }
        }
        Ok(())
    }

    /// Flatten to a four-column table (z, n, w, t).
    pub fn to_table(&self) -> Result<ObsTable> {
        let rows: Vec<Vec<f64>> = (0..self.n_countries())
            .map(|i| vec![self.z[i], self.n[i], self.w[i], self.t[i]])
            .collect();
        ObsTable::new(
            vec!["z".to_string(), "n".to_string(), "w".to_string(), "t".to_string()],
            rows,
        )
    }

    pub fn from_table(table: &ObsTable) -> Result<Self> {
        let z = table.column("z")?;
        let n = table.column("n")?;
        let w = table.column("w")?;
        let t = table.column("t")?;
        Self::new(z, n, w, t)
    }

    pub fn write_csv_path(&self, path: &std::path::Path) -> Result<()> {
        self.to_table()?.write_csv_path(path)
    }

    pub fn read_csv_path(path: &std::path::Path) -> Result<Self> {
        Self::from_table(&ObsTable::read_csv_path(path)?)
    }
}

/// Second-module loss: the Poisson negative log kernel, optionally divided
/// by an overdispersion factor (variance = overdispersion times mean).
#[derive(Debug, Clone)]
pub enum HpvLoss {
    Poisson,
    Quasi { overdispersion: f64 },
}

impl HpvLoss {
    fn scale(&self) -> f64 {
        match self {
            HpvLoss::Poisson => 1.0,
            HpvLoss::Quasi { overdispersion } => *overdispersion,
        }
    }

    fn validate(&self) -> Result<()> {
        if let HpvLoss::Quasi { overdispersion } = self {
            if !(overdispersion.is_finite() && *overdispersion > 0.0) {
                return Err(Error::invalid("the overdispersion factor must be positive"));
            }
        }
        Ok(())
    }
}

struct SurveyLoss;

impl PhiLoss for SurveyLoss {
    fn eval(&self, i: usize, obs: &[f64], phi: &[f64]) -> f64 {
        let (z, n) = (obs[0], obs[1]);
        let p = phi[i];
        if !(0.0..=1.0).contains(&p) || p == 0.0 || p == 1.0 {
            return f64::INFINITY;
        }
        -(z * p.ln() + (n - z) * (1.0 - p).ln())
    }

    fn grad(&self, i: usize, obs: &[f64], phi: &[f64]) -> Option<DVector<f64>> {
        let (z, n) = (obs[0], obs[1]);
        let p = phi[i];
        let mut g = DVector::zeros(phi.len());
        g[i] = -z / p + (n - z) / (1.0 - p);
        Some(g)
    }

    fn hess(&self, i: usize, obs: &[f64], phi: &[f64]) -> Option<DMatrix<f64>> {
        let (z, n) = (obs[0], obs[1]);
        let p = phi[i];
        let mut h = DMatrix::zeros(phi.len(), phi.len());
        h[(i, i)] = z / (p * p) + (n - z) / ((1.0 - p) * (1.0 - p));
        Some(h)
    }
}

struct IncidenceLoss {
    scale: f64,
}

impl EtaLoss for IncidenceLoss {
    fn eval(&self, i: usize, obs: &[f64], eta: &[f64], phi: &[f64]) -> f64 {
        let (w, t) = (obs[0], obs[1]);
        let log_rate = eta[0] + eta[1] * phi[i];
        let mean = t * log_rate.exp();
        // mean can overflow to +inf for extreme eta; that is a legitimate
        // "infinitely bad fit" rejection, not an error.
        (mean - w * (t.ln() + log_rate)) / self.scale
    }

    fn grad_eta(&self, i: usize, obs: &[f64], eta: &[f64], phi: &[f64]) -> Option<DVector<f64>> {
        let (w, t) = (obs[0], obs[1]);
        let p = phi[i];
        let mean = t * (eta[0] + eta[1] * p).exp();
        let common = (mean - w) / self.scale;
        Some(DVector::from_vec(vec![common, common * p]))
    }

    fn hess_eta(&self, i: usize, obs: &[f64], eta: &[f64], phi: &[f64]) -> Option<DMatrix<f64>> {
        let t = obs[1];
        let p = phi[i];
        let mean = t * (eta[0] + eta[1] * p).exp();
        let s = mean / self.scale;
        Some(DMatrix::from_row_slice(2, 2, &[s, s * p, s * p, s * p * p]))
    }
}

/// Exact sampler for the cut marginal: independent per-country
/// `Beta(nu z_i + 1, nu (n_i - z_i) + 1)`.
struct PrevalenceSampler {
    z: Vec<f64>,
    n: Vec<f64>,
}

impl PhiDirectSampler for PrevalenceSampler {
    fn sample(&self, nu: f64, rng: &mut dyn RngCore) -> DVector<f64> {
        DVector::from_iterator(
            self.z.len(),
            self.z.iter().zip(&self.n).map(|(&z, &n)| {
                let a = nu * z + 1.0;
                let b = nu * (n - z) + 1.0;
                let beta = Beta::new(a, b).expect("validated shape parameters");
                beta.sample(rng)
            }),
        )
    }
}

/// Build the two-module system for the given counts, loss, and rates.
pub fn hpv_system(data: &HpvData, loss: HpvLoss, nu: f64, nu_prime: f64) -> Result<TwoModuleSystem> {
    loss.validate()?;
    let k = data.n_countries();
    let z_rows: Vec<Vec<f64>> = (0..k).map(|i| vec![data.z[i], data.n[i]]).collect();
    let w_rows: Vec<Vec<f64>> = (0..k).map(|i| vec![data.w[i], data.t[i]]).collect();
    let module1 = Module1 {
        data: ObsTable::new(vec!["z".to_string(), "n".to_string()], z_rows)?,
        loss: Arc::new(SurveyLoss),
    };
    let module2 = Module2 {
        data: ObsTable::new(vec!["w".to_string(), "t".to_string()], w_rows)?,
        loss: Arc::new(IncidenceLoss { scale: loss.scale() }),
    };
    let total_w: f64 = data.w.iter().sum();
    let total_t: f64 = data.t.iter().sum();
    let base_rate = if total_w > 0.0 { (total_w / total_t).ln() } else { (0.5 / total_t).ln() };
    let phi_init: Vec<f64> =
        (0..k).map(|i| (data.z[i] + 0.5) / (data.n[i] + 1.0)).collect();
    TwoModuleSystem::builder(
        module1,
        module2,
        Arc::new(UnitCube),
        Arc::new(Flat),
        k,
        2,
    )
    .phi_names((1..=k).map(|i| format!("phi{i}")).collect())
    .eta_names(vec!["eta1".to_string(), "eta2".to_string()])
    .rates(nu, nu_prime)
    .phi_sampler(Arc::new(PrevalenceSampler { z: data.z.clone(), n: data.n.clone() }))
    .phi_init(phi_init)
    .eta_init(vec![base_rate, 0.0])
    .build()
}

/// Simulation truth for [`hpv_simulate`].
#[derive(Debug, Clone)]
pub struct HpvTruth {
    pub eta: [f64; 2],
    /// Prevalence range (uniform).
    pub phi_range: (f64, f64),
    /// Survey size range (uniform integers).
    pub n_range: (u64, u64),
    /// Follow-up range in thousand woman-years (log-uniform).
    pub t_range: (f64, f64),
}

impl Default for HpvTruth {
    fn default() -> Self {
        Self {
            eta: [-2.0, 13.0],
            phi_range: (0.04, 0.25),
            n_range: (100, 700),
            t_range: (20.0, 2000.0),
        }
    }
}

/// Simulate survey and incidence counts for `k` countries.
pub fn hpv_simulate(k: usize, truth: &HpvTruth, seed: u64) -> Result<HpvData> {
    if k == 0 {
        return Err(Error::invalid("need at least one country"));
    }
    let (lo, hi) = truth.phi_range;
    if !(0.0 < lo && lo < hi && hi < 1.0) {
        return Err(Error::invalid("phi_range must satisfy 0 < lo < hi < 1"));
    }
    if truth.n_range.0 < 1 || truth.n_range.0 > truth.n_range.1 {
        return Err(Error::invalid("n_range must be an increasing range of positive sizes"));
    }
    if !(truth.t_range.0 > 0.0 && truth.t_range.0 < truth.t_range.1) {
        return Err(Error::invalid("t_range must be an increasing positive range"));
    }
    let mut rng = substream(seed, Domain::Simulate, 0);
    let mut z = Vec::with_capacity(k);
    let mut n = Vec::with_capacity(k);
    let mut w = Vec::with_capacity(k);
    let mut t = Vec::with_capacity(k);
    for _ in 0..k {
        let phi = lo + (hi - lo) * rng.random::<f64>();
        let ni = rng.random_range(truth.n_range.0..=truth.n_range.1);
        let zi = Binomial::new(ni, phi)
            .map_err(|e| Error::invalid(format!("binomial setup failed: {e}")))?
            .sample(&mut rng);
        let log_t = truth.t_range.0.ln()
            + (truth.t_range.1.ln() - truth.t_range.0.ln()) * rng.random::<f64>();
        let ti = log_t.exp();
        let mean = ti * (truth.eta[0] + truth.eta[1] * phi).exp();
        let wi = Poisson::new(mean)
            .map_err(|e| Error::invalid(format!("poisson setup failed: {e}")))?
            .sample(&mut rng);
        z.push(zi as f64);
        n.push(ni as f64);
        w.push(wi);
        t.push(ti);
    }
    HpvData::new(z, n, w, t)
}
