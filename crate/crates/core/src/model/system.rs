//! The two-module system and its log-density kernels.
//!
//! A system couples a first module (data `z`, loss `l`, prior over phi) to a
//! second module (data `w`, loss `m`, conditional prior over eta given phi)
//! with learning rates `nu` and `nu_prime`. The three kernels it exposes are
//!
//! * `log_cut_marginal_phi(phi)   = log pi(phi) + nu * L(phi)`
//! * `log_conditional_eta(eta|phi) = log pi(eta|phi) + nu' * M(eta, phi)`
//! * `log_generalized_posterior   = the sum of the two`
//!
//! with `L(phi) = -sum_i l(z_i, phi)` and `M(eta, phi) = -sum_i m(w_i, eta,
//! phi)`. The additive split is exact by construction: the joint kernel is
//! computed as the sum of the other two, never re-derived.
//!
//! All densities are unnormalized. Out-of-support points yield `-inf` rather
//! than errors; a NaN or `-inf` *loss* inside the support is reported as a
//! pathological evaluation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use crate::error::{Error, Result};
use crate::fd;
use crate::model::{EtaLoss, EtaPrior, ObsTable, ParamVector, PhiLoss, PhiPrior};

/// First module: data and loss for phi.
pub struct Module1 {
    pub data: ObsTable,
    pub loss: Arc<dyn PhiLoss>,
}

/// Second module: data and loss for eta given phi.
pub struct Module2 {
    pub data: ObsTable,
    pub loss: Arc<dyn EtaLoss>,
}

/// A registered exact sampler for the cut marginal of phi (conjugate models).
///
/// The current learning rate is passed at call time so a system whose rate was
/// recalibrated keeps sampling the right tempered posterior.
pub trait PhiDirectSampler: Send + Sync {
    fn sample(&self, nu: f64, rng: &mut dyn RngCore) -> DVector<f64>;
}

/// A two-module system; see the module docs for the kernel definitions.
pub struct TwoModuleSystem {
    pub(crate) module1: Module1,
    pub(crate) module2: Module2,
    phi_prior: Arc<dyn PhiPrior>,
    eta_prior: Arc<dyn EtaPrior>,
    d_phi: usize,
    d_eta: usize,
    phi_names: Vec<String>,
    eta_names: Vec<String>,
    nu: f64,
    nu_prime: f64,
    phi_sampler: Option<Arc<dyn PhiDirectSampler>>,
    phi_init: Option<DVector<f64>>,
    eta_init: Option<DVector<f64>>,
    m1_has_grad: bool,
    m1_has_hess: bool,
    m2_has_grad: bool,
    m2_has_hess: bool,
}

/// Builder for [`TwoModuleSystem`].
pub struct SystemBuilder {
    module1: Module1,
    module2: Module2,
    phi_prior: Arc<dyn PhiPrior>,
    eta_prior: Arc<dyn EtaPrior>,
    d_phi: usize,
    d_eta: usize,
    phi_names: Option<Vec<String>>,
    eta_names: Option<Vec<String>>,
    nu: f64,
    nu_prime: f64,
    phi_sampler: Option<Arc<dyn PhiDirectSampler>>,
    phi_init: Option<DVector<f64>>,
    eta_init: Option<DVector<f64>>,
}

impl SystemBuilder {
    pub fn new(
        module1: Module1,
        module2: Module2,
        phi_prior: Arc<dyn PhiPrior>,
        eta_prior: Arc<dyn EtaPrior>,
        d_phi: usize,
        d_eta: usize,
    ) -> Self {
        Self {
            module1,
            module2,
            phi_prior,
            eta_prior,
            d_phi,
            d_eta,
            phi_names: None,
            eta_names: None,
            nu: 1.0,
            nu_prime: 1.0,
            phi_sampler: None,
            phi_init: None,
            eta_init: None,
        }
    }

    pub fn phi_names(mut self, names: Vec<String>) -> Self {
        self.phi_names = Some(names);
        self
    }

    pub fn eta_names(mut self, names: Vec<String>) -> Self {
        self.eta_names = Some(names);
        self
    }

    /// Learning rates `(nu, nu_prime)`; both default to 1.
    pub fn rates(mut self, nu: f64, nu_prime: f64) -> Self {
        self.nu = nu;
        self.nu_prime = nu_prime;
        self
    }

    /// Register an exact sampler for the cut marginal of phi.
    pub fn phi_sampler(mut self, sampler: Arc<dyn PhiDirectSampler>) -> Self {
        self.phi_sampler = Some(sampler);
        self
    }

    /// Register a default starting point for phi optimizations and chains.
    pub fn phi_init(mut self, init: Vec<f64>) -> Self {
        self.phi_init = Some(DVector::from_vec(init));
        self
    }

    /// Register a default starting point for eta inner solves and chains.
    pub fn eta_init(mut self, init: Vec<f64>) -> Self {
        self.eta_init = Some(DVector::from_vec(init));
        self
    }

    pub fn build(self) -> Result<TwoModuleSystem> {
        if self.d_phi == 0 || self.d_eta == 0 {
            return Err(Error::invalid("both parameter blocks must be non-empty"));
        }
        if !(self.nu.is_finite() && self.nu > 0.0 && self.nu_prime.is_finite() && self.nu_prime > 0.0) {
            return Err(Error::invalid("learning rates must be positive and finite"));
        }
        if self.module1.data.n_obs() == 0 || self.module2.data.n_obs() == 0 {
            return Err(Error::invalid("both modules need at least one observation"));
        }
        let phi_names = self
            .phi_names
            .unwrap_or_else(|| (1..=self.d_phi).map(|i| format!("phi{i}")).collect());
        let eta_names = self
            .eta_names
            .unwrap_or_else(|| (1..=self.d_eta).map(|i| format!("eta{i}")).collect());
        if phi_names.len() != self.d_phi || eta_names.len() != self.d_eta {
            return Err(Error::invalid("parameter name lists must match block dimensions"));
        }
        if let Some(init) = &self.phi_init {
            if init.len() != self.d_phi {
                return Err(Error::invalid("phi init length does not match d_phi"));
            }
        }
        if let Some(init) = &self.eta_init {
            if init.len() != self.d_eta {
                return Err(Error::invalid("eta init length does not match d_eta"));
            }
        }
        // Probe observation 0 once for analytic-derivative availability; the
        // loss contract requires homogeneity across observations.
        let probe_phi = self.phi_init.as_ref().map(|v| v.as_slice().to_vec());
        let probe_eta = self.eta_init.as_ref().map(|v| v.as_slice().to_vec());
        let phi0 = probe_phi.unwrap_or_else(|| vec![0.5; self.d_phi]);
        let eta0 = probe_eta.unwrap_or_else(|| vec![0.0; self.d_eta]);
        let m1_has_grad = self.module1.loss.grad(0, self.module1.data.row(0), &phi0).is_some();
        let m1_has_hess = self.module1.loss.hess(0, self.module1.data.row(0), &phi0).is_some();
        let m2_has_grad = self
            .module2
            .loss
            .grad_eta(0, self.module2.data.row(0), &eta0, &phi0)
            .is_some();
        let m2_has_hess = self
            .module2
            .loss
            .hess_eta(0, self.module2.data.row(0), &eta0, &phi0)
            .is_some();
        Ok(TwoModuleSystem {
            module1: self.module1,
            module2: self.module2,
            phi_prior: self.phi_prior,
            eta_prior: self.eta_prior,
            d_phi: self.d_phi,
            d_eta: self.d_eta,
            phi_names,
            eta_names,
            nu: self.nu,
            nu_prime: self.nu_prime,
            phi_sampler: self.phi_sampler,
            phi_init: self.phi_init,
            eta_init: self.eta_init,
            m1_has_grad,
            m1_has_hess,
            m2_has_grad,
            m2_has_hess,
        })
    }
}

impl TwoModuleSystem {
    pub fn builder(
        module1: Module1,
        module2: Module2,
        phi_prior: Arc<dyn PhiPrior>,
        eta_prior: Arc<dyn EtaPrior>,
        d_phi: usize,
        d_eta: usize,
    ) -> SystemBuilder {
        SystemBuilder::new(module1, module2, phi_prior, eta_prior, d_phi, d_eta)
    }

    pub fn d_phi(&self) -> usize {
        self.d_phi
    }

    pub fn d_eta(&self) -> usize {
        self.d_eta
    }

    /// Number of first-module observations.
    pub fn n1(&self) -> usize {
        self.module1.data.n_obs()
    }

    /// Number of second-module observations.
    pub fn n2(&self) -> usize {
        self.module2.data.n_obs()
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn nu_prime(&self) -> f64 {
        self.nu_prime
    }

    /// Replace the learning rates (e.g. after calibration).
    pub fn set_rates(&mut self, nu: f64, nu_prime: f64) -> Result<()> {
        if !(nu.is_finite() && nu > 0.0 && nu_prime.is_finite() && nu_prime > 0.0) {
            return Err(Error::invalid("learning rates must be positive and finite"));
        }
        self.nu = nu;
        self.nu_prime = nu_prime;
        Ok(())
    }

    pub fn phi_names(&self) -> &[String] {
        &self.phi_names
    }

    pub fn eta_names(&self) -> &[String] {
        &self.eta_names
    }

    /// Names of the joint vector, phi block first.
    pub fn joint_names(&self) -> Vec<String> {
        self.phi_names.iter().chain(self.eta_names.iter()).cloned().collect()
    }

    pub fn module1_data(&self) -> &ObsTable {
        &self.module1.data
    }

    pub fn module2_data(&self) -> &ObsTable {
        &self.module2.data
    }

    pub fn phi_prior(&self) -> &dyn PhiPrior {
        self.phi_prior.as_ref()
    }

    pub fn eta_prior(&self) -> &dyn EtaPrior {
        self.eta_prior.as_ref()
    }

    pub fn phi_sampler(&self) -> Option<&Arc<dyn PhiDirectSampler>> {
        self.phi_sampler.as_ref()
    }

    pub fn phi_init(&self) -> Option<&DVector<f64>> {
        self.phi_init.as_ref()
    }

    /// Default eta starting point: the registered init, else the conditional
    /// prior mean at `phi`, else zero.
    pub fn eta_start(&self, phi: &[f64]) -> DVector<f64> {
        if let Some(init) = &self.eta_init {
            return init.clone();
        }
        if let Some(mean) = self.eta_prior.mean(phi) {
            if mean.len() == self.d_eta && mean.iter().all(|v| v.is_finite()) {
                return DVector::from_vec(mean);
            }
        }
        DVector::zeros(self.d_eta)
    }

    fn check_phi_len(&self, phi: &[f64]) -> Result<()> {
        if phi.len() != self.d_phi {
            return Err(Error::invalid(format!(
                "phi has length {}, expected {}",
                phi.len(),
                self.d_phi
            )));
        }
        Ok(())
    }

    fn check_eta_len(&self, eta: &[f64]) -> Result<()> {
        if eta.len() != self.d_eta {
            return Err(Error::invalid(format!(
                "eta has length {}, expected {}",
                eta.len(),
                self.d_eta
            )));
        }
        Ok(())
    }

    fn guard_loss(value: f64, context: &str) -> Result<f64> {
        // +inf = infinitely bad fit = zero likelihood; NaN / -inf are bugs.
        if value.is_nan() || value == f64::NEG_INFINITY {
            Err(Error::PathologicalEval { context: context.to_string(), value })
        } else {
            Ok(value)
        }
    }

    /// First-module criterion `L(phi) = -sum_i l(z_i, phi)`.
    pub fn criterion_phi(&self, phi: &[f64]) -> Result<f64> {
        self.check_phi_len(phi)?;
        let mut total = 0.0;
        for i in 0..self.n1() {
            let v = self.module1.loss.eval(i, self.module1.data.row(i), phi);
            total += Self::guard_loss(v, "module-1 loss")?;
        }
        Ok(-total)
    }

    /// Second-module criterion `M(eta, phi) = -sum_i m(w_i, eta, phi)`.
    pub fn criterion_eta(&self, eta: &[f64], phi: &[f64]) -> Result<f64> {
        self.check_phi_len(phi)?;
        self.check_eta_len(eta)?;
        let mut total = 0.0;
        for i in 0..self.n2() {
            let v = self.module2.loss.eval(i, self.module2.data.row(i), eta, phi);
            total += Self::guard_loss(v, "module-2 loss")?;
        }
        Ok(-total)
    }

    /// `log pi(phi) + nu * L(phi)`; `-inf` out of support. Touches only the
    /// first module.
    pub fn log_cut_marginal_phi(&self, phi: &[f64]) -> Result<f64> {
        self.check_phi_len(phi)?;
        let lp = self.phi_prior.log_density(phi);
        if lp == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        if lp.is_nan() || lp == f64::INFINITY {
            return Err(Error::PathologicalEval { context: "phi prior".to_string(), value: lp });
        }
        let l = self.criterion_phi(phi)?;
        Ok(lp + self.nu * l)
    }

    /// `log pi(eta|phi) + nu' * M(eta, phi)`; `-inf` out of support.
    pub fn log_conditional_eta(&self, eta: &[f64], phi: &[f64]) -> Result<f64> {
        self.check_phi_len(phi)?;
        self.check_eta_len(eta)?;
        let lp = self.eta_prior.log_density(eta, phi);
        if lp == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        if lp.is_nan() || lp == f64::INFINITY {
            return Err(Error::PathologicalEval { context: "eta prior".to_string(), value: lp });
        }
        let m = self.criterion_eta(eta, phi)?;
        Ok(lp + self.nu_prime * m)
    }

    /// Joint generalized-posterior kernel on raw blocks; exactly the sum of
    /// the cut marginal and the conditional kernels.
    pub fn log_generalized_posterior_parts(&self, phi: &[f64], eta: &[f64]) -> Result<f64> {
        let a = self.log_cut_marginal_phi(phi)?;
        if a == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        let b = self.log_conditional_eta(eta, phi)?;
        Ok(a + b)
    }

    /// Joint generalized-posterior kernel for a named parameter vector whose
    /// names must match `joint_names()` in order.
    pub fn log_generalized_posterior(&self, theta: &ParamVector) -> Result<f64> {
        let expected = self.joint_names();
        if theta.names() != expected.as_slice() {
            return Err(Error::invalid(format!(
                "parameter names {:?} do not match the system's {:?}",
                theta.names(),
                expected
            )));
        }
        let (phi, eta) = theta.split(self.d_phi)?;
        self.log_generalized_posterior_parts(phi, eta)
    }

    /// Gradient of `L` with respect to phi (analytic when the loss provides
    /// it, central differences otherwise).
    pub fn grad_criterion_phi(&self, phi: &[f64]) -> Result<DVector<f64>> {
        self.check_phi_len(phi)?;
        if self.m1_has_grad {
            let mut g = DVector::zeros(self.d_phi);
            for i in 0..self.n1() {
                let gi = self
                    .module1
                    .loss
                    .grad(i, self.module1.data.row(i), phi)
                    .expect("loss advertised analytic gradients for observation 0 but not for all");
                g -= gi;
            }
            Ok(g)
        } else {
            fd::grad_central(|p| self.criterion_phi(p), phi)
        }
    }

    /// Hessian of `L` with respect to phi.
    pub fn hess_criterion_phi(&self, phi: &[f64]) -> Result<DMatrix<f64>> {
        self.check_phi_len(phi)?;
        if self.m1_has_hess {
            let mut h = DMatrix::zeros(self.d_phi, self.d_phi);
            for i in 0..self.n1() {
                let hi = self
                    .module1
                    .loss
                    .hess(i, self.module1.data.row(i), phi)
                    .expect("loss advertised analytic Hessians for observation 0 but not for all");
                h -= hi;
            }
            Ok(h)
        } else if self.m1_has_grad {
            fd::hess_from_grad(|p| self.grad_criterion_phi(p), phi)
        } else {
            fd::hess_central(|p| self.criterion_phi(p), phi)
        }
    }

    /// Gradient of `M` with respect to eta.
    pub fn grad_criterion_eta(&self, eta: &[f64], phi: &[f64]) -> Result<DVector<f64>> {
        self.check_phi_len(phi)?;
        self.check_eta_len(eta)?;
        if self.m2_has_grad {
            let mut g = DVector::zeros(self.d_eta);
            for i in 0..self.n2() {
                let gi = self
                    .module2
                    .loss
                    .grad_eta(i, self.module2.data.row(i), eta, phi)
                    .expect("loss advertised analytic gradients for observation 0 but not for all");
                g -= gi;
            }
            Ok(g)
        } else {
            fd::grad_central(|e| self.criterion_eta(e, phi), eta)
        }
    }

    /// Hessian of `M` with respect to eta.
    pub fn hess_criterion_eta(&self, eta: &[f64], phi: &[f64]) -> Result<DMatrix<f64>> {
        self.check_phi_len(phi)?;
        self.check_eta_len(eta)?;
        if self.m2_has_hess {
            let mut h = DMatrix::zeros(self.d_eta, self.d_eta);
            for i in 0..self.n2() {
                let hi = self
                    .module2
                    .loss
                    .hess_eta(i, self.module2.data.row(i), eta, phi)
                    .expect("loss advertised analytic Hessians for observation 0 but not for all");
                h -= hi;
            }
            Ok(h)
        } else if self.m2_has_grad {
            fd::hess_from_grad(|e| self.grad_criterion_eta(e, phi), eta)
        } else {
            fd::hess_central(|e| self.criterion_eta(e, phi), eta)
        }
    }

    /// Cross second derivative `d^2 M / d phi d eta` as a `d_phi x d_eta`
    /// matrix, by central differences of the eta gradient over phi.
    pub fn cross_hess_phi_eta(&self, eta: &[f64], phi: &[f64]) -> Result<DMatrix<f64>> {
        self.check_phi_len(phi)?;
        self.check_eta_len(eta)?;
        let mut out = DMatrix::zeros(self.d_phi, self.d_eta);
        let mut work = phi.to_vec();
        for a in 0..self.d_phi {
            let h = fd::step_first(phi[a]);
            work[a] = phi[a] + h;
            let gp = self.grad_criterion_eta(eta, &work)?;
            work[a] = phi[a] - h;
            let gm = self.grad_criterion_eta(eta, &work)?;
            work[a] = phi[a];
            for b in 0..self.d_eta {
                out[(a, b)] = (gp[b] - gm[b]) / (2.0 * h);
            }
        }
        Ok(out)
    }

    /// Per-observation gradient of `l(z_i, .)` at phi (for score covariance
    /// estimation). Analytic when available, else per-observation central
    /// differences.
    pub fn obs_grad_phi(&self, i: usize, phi: &[f64]) -> Result<DVector<f64>> {
        self.check_phi_len(phi)?;
        if let Some(g) = self.module1.loss.grad(i, self.module1.data.row(i), phi) {
            return Ok(g);
        }
        fd::grad_central(
            |p| Self::guard_loss(self.module1.loss.eval(i, self.module1.data.row(i), p), "module-1 loss"),
            phi,
        )
    }

    /// Per-observation gradient of `m(w_i, ., phi)` at eta, with an optional
    /// replacement observation row (used by the grouped bootstrap).
    pub fn obs_grad_eta(&self, i: usize, row: Option<&[f64]>, eta: &[f64], phi: &[f64]) -> Result<DVector<f64>> {
        self.check_phi_len(phi)?;
        self.check_eta_len(eta)?;
        let obs = row.unwrap_or_else(|| self.module2.data.row(i));
        if let Some(g) = self.module2.loss.grad_eta(i, obs, eta, phi) {
            return Ok(g);
        }
        fd::grad_central(
            |e| Self::guard_loss(self.module2.loss.eval(i, obs, e, phi), "module-2 loss"),
            eta,
        )
    }
}
