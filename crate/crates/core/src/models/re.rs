//! Gaussian random effects with the variance module cut from the mean module.
//!
//! Raw data are `N` groups of `J` observations `y_ij ~ N(beta_i, phi_i^2)`
//! with random effects `beta_i ~ N(0, psi^2)`. The sufficient statistics are
//! the group means `w_i` and within-group sums of squares
//! `z_i = sum_j (y_ij - w_i)^2`.
//!
//! Module 1: `z_i | phi_i ~ Gamma((J-1)/2, rate 1/(2 phi_i^2))`, giving the
//! loss `z_i / (2 phi_i^2) + (J-1) ln phi_i` with the scale-invariant prior
//! `pi(phi_i) ∝ 1/phi_i`. The cut marginal is conjugate:
//! `phi_i^2 ~ InvGamma(nu (J-1)/2, nu z_i / 2)`.
//!
//! Module 2: `w_i | beta_i, phi_i ~ N(beta_i, phi_i^2 / J)`, analyzed either
//! with the Gaussian negative log likelihood or with Tukey's biweight rho
//! applied to the standardized residual, which caps each group's influence.
//! The second-module parameter is `eta = (beta_1..beta_N, psi)` with the
//! conditional prior `pi(beta|psi) pi(psi|phi)`,
//! `pi(psi|phi) ∝ psi / (phibar^2/J + psi^2)`, `phibar^2 = mean(phi_i^2)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::calibration::GroupResampler;
use crate::error::{Error, Result};
use crate::model::{
    EtaLoss, EtaPrior, IndependentNormal, Module1, Module2, ObsTable, PhiDirectSampler, PhiLoss,
    PositiveReciprocal, TwoModuleSystem,
};
use crate::seeding::{substream, Domain};

/// Tukey's biweight rho: `u^2/2 - u^4/(2 k^2) + u^6/(6 k^4)` for `|u| <= k`,
/// constant `k^2/6` beyond. Continuously differentiable everywhere.
pub fn tukey_rho(u: f64, kappa: f64) -> f64 {
    if u.abs() <= kappa {
        // u^2 (3 - 3 r^2 + r^4) / 6 with r = u/kappa; this factoring avoids
        // the cancellation in k^2/6 (1 - (1 - r^2)^3) when r is tiny.
        let r2 = (u / kappa) * (u / kappa);
        u * u * (3.0 - 3.0 * r2 + r2 * r2) / 6.0
    } else {
        kappa * kappa / 6.0
    }
}

/// First derivative of [`tukey_rho`]: `u (1 - u^2/k^2)^2` inside, 0 outside.
pub fn tukey_drho(u: f64, kappa: f64) -> f64 {
    if u.abs() <= kappa {
        let s = 1.0 - (u / kappa) * (u / kappa);
        u * s * s
    } else {
        0.0
    }
}

/// Second derivative of [`tukey_rho`]: `(1 - u^2/k^2)(1 - 5 u^2/k^2)` inside,
/// 0 outside.
pub fn tukey_ddrho(u: f64, kappa: f64) -> f64 {
    if u.abs() <= kappa {
        let r2 = (u / kappa) * (u / kappa);
        (1.0 - r2) * (1.0 - 5.0 * r2)
    } else {
        0.0
    }
}

/// Raw grouped observations: `N` rows of `J` values each.
#[derive(Debug, Clone)]
pub struct ReData {
    y: Vec<Vec<f64>>,
}

impl ReData {
    pub fn new(y: Vec<Vec<f64>>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::invalid("need at least one group"));
        }
        let j = y[0].len();
        if j < 2 {
            return Err(Error::invalid("need at least two observations per group"));
        }
        for (i, row) in y.iter().enumerate() {
            if row.len() != j {
                return Err(Error::invalid(format!(
                    "group {i} has {} observations, expected {j}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite observation in group {i}")));
            }
        }
        Ok(Self { y })
    }

    pub fn n_groups(&self) -> usize {
        self.y.len()
    }

    pub fn group_len(&self) -> usize {
        self.y[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.y
    }

    /// Group means.
    pub fn w(&self) -> Vec<f64> {
        let j = self.group_len() as f64;
        self.y.iter().map(|row| row.iter().sum::<f64>() / j).collect()
    }

    /// Within-group sums of squared deviations from the group mean.
    pub fn z(&self) -> Vec<f64> {
        self.y
            .iter()
            .map(|row| {
                let mean = row.iter().sum::<f64>() / row.len() as f64;
                row.iter().map(|v| (v - mean) * (v - mean)).sum()
            })
            .collect()
    }

    pub fn to_table(&self) -> Result<ObsTable> {
        let j = self.group_len();
        ObsTable::new((1..=j).map(|k| format!("y{k}")).collect(), self.y.clone())
    }

    pub fn from_table(table: &ObsTable) -> Result<Self> {
        let rows: Vec<Vec<f64>> = (0..table.n_obs()).map(|i| table.row(i).to_vec()).collect();
        Self::new(rows)
    }

    pub fn write_csv_path(&self, path: &std::path::Path) -> Result<()> {
        self.to_table()?.write_csv_path(path)
    }

    pub fn read_csv_path(path: &std::path::Path) -> Result<Self> {
        Self::from_table(&ObsTable::read_csv_path(path)?)
    }
}

impl GroupResampler for ReData {
    fn group_size(&self, _i: usize) -> usize {
        self.group_len()
    }

    /// Weighted group mean: the module-2 observation row under reweighting
    /// (the weights sum to one).
    fn replicate(&self, i: usize, weights: &[f64]) -> Vec<f64> {
        vec![self.y[i].iter().zip(weights).map(|(y, om)| y * om).sum()]
    }
}

/// Second-module loss applied to the standardized group-mean residual.
#[derive(Debug, Clone)]
pub enum ReLoss {
    Gaussian,
    Tukey { kappa: f64 },
}

impl ReLoss {
    fn validate(&self) -> Result<()> {
        if let ReLoss::Tukey { kappa } = self {
            if !(kappa.is_finite() && *kappa > 0.0) {
                return Err(Error::invalid("the biweight threshold must be positive"));
            }
        }
        Ok(())
    }

    fn rho(&self, u: f64) -> f64 {
        match self {
            ReLoss::Gaussian => 0.5 * u * u,
            ReLoss::Tukey { kappa } => tukey_rho(u, *kappa),
        }
    }

    fn drho(&self, u: f64) -> f64 {
        match self {
            ReLoss::Gaussian => u,
            ReLoss::Tukey { kappa } => tukey_drho(u, *kappa),
        }
    }

    fn ddrho(&self, u: f64) -> f64 {
        match self {
            ReLoss::Gaussian => 1.0,
            ReLoss::Tukey { kappa } => tukey_ddrho(u, *kappa),
        }
    }
}

struct GroupVarianceLoss {
    j: f64,
}

impl PhiLoss for GroupVarianceLoss {
    fn eval(&self, i: usize, obs: &[f64], phi: &[f64]) -> f64 {
        let z = obs[0];
        let p = phi[i];
        if p <= 0.0 {
            return f64::INFINITY;
        }
        z / (2.0 * p * p) + (self.j - 1.0) * p.ln()
    }

    fn grad(&self, i: usize, obs: &[f64], phi: &[f64]) -> Option<DVector<f64>> {
        let z = obs[0];
        let p = phi[i];
        let mut g = DVector::zeros(phi.len());
        if p > 0.0 {
            g[i] = -z / (p * p * p) + (self.j - 1.0) / p;
        }
        Some(g)
    }

    fn hess(&self, i: usize, obs: &[f64], phi: &[f64]) -> Option<DMatrix<f64>> {
        let z = obs[0];
        let p = phi[i];
        let mut h = DMatrix::zeros(phi.len(), phi.len());
        if p > 0.0 {
            h[(i, i)] = 3.0 * z / (p * p * p * p) - (self.j - 1.0) / (p * p);
        }
        Some(h)
    }
}

struct GroupMeanLoss {
    j: f64,
    loss: ReLoss,
}

impl GroupMeanLoss {
    fn residual(&self, w: f64, beta: f64, p: f64) -> f64 {
        (w - beta) * self.j.sqrt() / p
    }
}

impl EtaLoss for GroupMeanLoss {
    fn eval(&self, i: usize, obs: &[f64], eta: &[f64], phi: &[f64]) -> f64 {
        let w = obs[0];
        let p = phi[i];
        if p <= 0.0 {
            return f64::INFINITY;
        }
        let u = self.residual(w, eta[i], p);
        0.5 * (2.0 * std::f64::consts::PI * p * p / self.j).ln() + self.loss.rho(u)
    }

    fn grad_eta(&self, i: usize, obs: &[f64], eta: &[f64], phi: &[f64]) -> Option<DVector<f64>> {
        let w = obs[0];
        let p = phi[i];
        let mut g = DVector::zeros(eta.len());
        if p > 0.0 {
            let u = self.residual(w, eta[i], p);
            g[i] = -self.loss.drho(u) * self.j.sqrt() / p;
        }
        Some(g)
    }

    fn hess_eta(&self, i: usize, obs: &[f64], eta: &[f64], phi: &[f64]) -> Option<DMatrix<f64>> {
        let w = obs[0];
        let p = phi[i];
        let mut h = DMatrix::zeros(eta.len(), eta.len());
        if p > 0.0 {
            let u = self.residual(w, eta[i], p);
            h[(i, i)] = self.loss.ddrho(u) * self.j / (p * p);
        }
        Some(h)
    }
}

/// Conditional prior over `eta = (beta, psi)`:
/// `beta_i ~ N(0, psi^2)` and `pi(psi|phi) ∝ psi / (phibar^2/J + psi^2)`.
struct ReEtaPrior {
    j: f64,
}

impl EtaPrior for ReEtaPrior {
    fn log_density(&self, eta: &[f64], phi: &[f64]) -> f64 {
        let n = eta.len() - 1;
        let psi = eta[n];
        if psi <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let phibar_sq = phi.iter().map(|p| p * p).sum::<f64>() / phi.len() as f64;
        let mut total = psi.ln() - (phibar_sq / self.j + psi * psi).ln();
        let inv_two_var = 0.5 / (psi * psi);
        for &b in &eta[..n] {
            total -= b * b * inv_two_var;
        }
        total - n as f64 * psi.ln()
    }
}

/// Exact sampler for the cut marginal: per group,
/// `phi_i = sqrt(1/g)` with `g ~ Gamma(nu (J-1)/2, rate nu z_i / 2)`.
struct RootInvGammaSampler {
    z: Vec<f64>,
    j: f64,
}

impl PhiDirectSampler for RootInvGammaSampler {
    fn sample(&self, nu: f64, rng: &mut dyn RngCore) -> DVector<f64> {
        DVector::from_iterator(
            self.z.len(),
            self.z.iter().map(|&z| {
                let shape = nu * (self.j - 1.0) / 2.0;
                let scale = 2.0 / (nu * z);
                let g = Gamma::new(shape, scale).expect("validated shape parameters").sample(rng);
                (1.0 / g).sqrt()
            }),
        )
    }
}

fn module_tables(data: &ReData) -> Result<(ObsTable, ObsTable)> {
    let z_rows: Vec<Vec<f64>> = data.z().into_iter().map(|z| vec![z]).collect();
    let w_rows: Vec<Vec<f64>> = data.w().into_iter().map(|w| vec![w]).collect();
    for (i, row) in z_rows.iter().enumerate() {
        if row[0] <= 0.0 {
            return Err(Error::invalid(format!(
                "group {i} has zero within-group variation; its scale is not identified"
            )));
        }
    }
    Ok((
        ObsTable::new(vec!["z".to_string()], z_rows)?,
        ObsTable::new(vec!["w".to_string()], w_rows)?,
    ))
}

fn phi_start(data: &ReData) -> Vec<f64> {
    let j = data.group_len() as f64;
    data.z().iter().map(|z| (z / (j - 1.0)).sqrt()).collect()
}

fn beta_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("beta{i}")).collect()
}

/// Build the full system with `eta = (beta_1..beta_N, psi)`.
pub fn re_system(data: &ReData, loss: ReLoss, nu: f64, nu_prime: f64) -> Result<TwoModuleSystem> {
    loss.validate()?;
    let n = data.n_groups();
    let j = data.group_len() as f64;
    let (z_table, w_table) = module_tables(data)?;
    let w = data.w();
    let mean_w = w.iter().sum::<f64>() / n as f64;
    let var_w = w.iter().map(|v| (v - mean_w) * (v - mean_w)).sum::<f64>() / (n as f64 - 1.0).max(1.0);
    let psi_start = var_w.sqrt().max(1e-3);
    let mut eta_names = beta_names(n);
    eta_names.push("psi".to_string());
    let mut eta_init = w.clone();
    eta_init.push(psi_start);
    TwoModuleSystem::builder(
        Module1 { data: z_table, loss: Arc::new(GroupVarianceLoss { j }) },
        Module2 { data: w_table, loss: Arc::new(GroupMeanLoss { j, loss }) },
        Arc::new(PositiveReciprocal),
        Arc::new(ReEtaPrior { j }),
        n,
        n + 1,
    )
    .phi_names((1..=n).map(|i| format!("phi{i}")).collect())
    .eta_names(eta_names)
    .rates(nu, nu_prime)
    .phi_sampler(Arc::new(RootInvGammaSampler { z: data.z(), j }))
    .phi_init(phi_start(data))
    .eta_init(eta_init)
    .build()
}

/// Build the reduced system with `eta = beta` and the random-effect scale
/// frozen at `psi_fixed`; used to calibrate the second-module learning rate.
pub fn re_system_beta_only(
    data: &ReData,
    loss: ReLoss,
    psi_fixed: f64,
    nu: f64,
    nu_prime: f64,
) -> Result<TwoModuleSystem> {
    loss.validate()?;
    if !(psi_fixed.is_finite() && psi_fixed > 0.0) {
        return Err(Error::invalid("psi_fixed must be positive"));
    }
    let n = data.n_groups();
    let j = data.group_len() as f64;
    let (z_table, w_table) = module_tables(data)?;
    TwoModuleSystem::builder(
        Module1 { data: z_table, loss: Arc::new(GroupVarianceLoss { j }) },
        Module2 { data: w_table, loss: Arc::new(GroupMeanLoss { j, loss }) },
        Arc::new(PositiveReciprocal),
        Arc::new(IndependentNormal::isotropic(n, 0.0, psi_fixed)),
        n,
        n,
    )
    .phi_names((1..=n).map(|i| format!("phi{i}")).collect())
    .eta_names(beta_names(n))
    .rates(nu, nu_prime)
    .phi_sampler(Arc::new(RootInvGammaSampler { z: data.z(), j }))
    .phi_init(phi_start(data))
    .eta_init(data.w())
    .build()
}

/// Ground truth for [`re_simulate`].
#[derive(Debug, Clone)]
pub struct ReTruth {
    pub psi: f64,
    /// Common within-group standard deviation.
    pub phi: f64,
    /// Fixed values replacing drawn random effects, by group index.
    pub beta_overrides: Vec<(usize, f64)>,
}

impl Default for ReTruth {
    fn default() -> Self {
        Self { psi: 1.0, phi: 0.5, beta_overrides: vec![(0, 10.0)] }
    }
}

/// Simulate `n` groups of `j` observations.
pub fn re_simulate(n: usize, j: usize, truth: &ReTruth, seed: u64) -> Result<ReData> {
    if n == 0 || j < 2 {
        return Err(Error::invalid("need n >= 1 groups of j >= 2 observations"));
    }
    if !(truth.psi > 0.0 && truth.phi > 0.0) {
        return Err(Error::invalid("psi and phi must be positive"));
    }
    for &(i, _) in &truth.beta_overrides {
        if i >= n {
            return Err(Error::invalid(format!("override index {i} out of range")));
        }
    }
    let mut rng = substream(seed, Domain::Simulate, 0);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let mut beta = truth.psi * rng.sample::<f64, _>(StandardNormal);
        if let Some(&(_, v)) = truth.beta_overrides.iter().find(|&&(k, _)| k == i) {
            beta = v;
        }
        let row: Vec<f64> = (0..j)
            .map(|_| beta + truth.phi * rng.sample::<f64, _>(StandardNormal))
            .collect();
        y.push(row);
    }
    ReData::new(y)
}
