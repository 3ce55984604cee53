//! Learning-rate calibration from curvature and score covariance.
//!
//! For a module whose criterion is a sum of per-observation losses, the
//! calibrated rate matches the trace of the generalized-posterior covariance
//! to the trace of the sandwich covariance:
//!
//! ```text
//! rate = tr(H Psi^{-1} H) / tr(H)
//! ```
//!
//! where `H` is the average curvature of the criterion at its mode and
//! `Psi` the average outer product of per-observation score vectors. Both
//! matrices rescale the same way under a common rescaling of the loss, so
//! the rate is invariant to it; rescaling the loss alone moves the rate
//! inversely, as it should.
//!
//! When each second-module observation carries its own parameter coordinate
//! the plug-in `Psi` is identically singular (each score is zero at the
//! mode). The grouped Bayesian bootstrap replaces the plug-in with the
//! average outer product of scores evaluated at the original mode but on
//! weighted within-group replicates of the data.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::TwoModuleSystem;
use crate::optim::{self, NewtonOptions};
use crate::seeding::{substream, Domain};

/// `tr(H Psi^{-1} H) / tr(H)` for a positive definite curvature `H` and
/// score covariance `Psi`.
pub fn rate_from_blocks(h: &DMatrix<f64>, psi: &DMatrix<f64>) -> Result<f64> {
    if h.nrows() != h.ncols() || psi.nrows() != psi.ncols() || h.nrows() != psi.nrows() {
        return Err(Error::invalid("curvature and score blocks must be square and conformable"));
    }
    let trace_h = h.trace();
    if !(trace_h.is_finite() && trace_h > 0.0) {
        return Err(Error::invalid("the curvature block must have positive trace"));
    }
    let psi_sym = linalg::symmetrize(psi);
    let chol = linalg::cholesky(&psi_sym, "score covariance").map_err(|_| {
        Error::SingularScoreCovariance {
            context: "score covariance".to_string(),
            hint: "the plug-in score covariance is singular; use the grouped bootstrap".to_string(),
        }
    })?;
    let psi_inv_h = chol.solve(h);
    let num = (h * psi_inv_h).trace();
    if !num.is_finite() {
        return Err(Error::invalid("non-finite trace in the rate computation"));
    }
    Ok(num / trace_h)
}

/// Average curvature and plug-in score covariance of module 1 at `phi`.
pub fn module1_blocks(sys: &TwoModuleSystem, phi: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n1 = sys.n1() as f64;
    let hess = sys.hess_criterion_phi(phi)?;
    let h = linalg::symmetrize(&(-hess / n1));
    let d = sys.d_phi();
    let mut psi = DMatrix::zeros(d, d);
    for i in 0..sys.n1() {
        let g = sys.obs_grad_phi(i, phi)?;
        psi += &g * g.transpose();
    }
    psi /= n1;
    Ok((h, psi))
}

/// Average curvature and plug-in score covariance of module 2 at
/// `(eta, phi)`, optionally restricted to the masked eta coordinates.
pub fn module2_blocks(
    sys: &TwoModuleSystem,
    eta: &[f64],
    phi: &[f64],
    mask: Option<&[bool]>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n2 = sys.n2() as f64;
    let hess = sys.hess_criterion_eta(eta, phi)?;
    let h_full = linalg::symmetrize(&(-hess / n2));
    let idx = mask_indices(sys.d_eta(), mask)?;
    let h = project(&h_full, &idx);
    let mut psi = DMatrix::zeros(idx.len(), idx.len());
    for i in 0..sys.n2() {
        let g_full = sys.obs_grad_eta(i, None, eta, phi)?;
        let g = DVector::from_iterator(idx.len(), idx.iter().map(|&k| g_full[k]));
        psi += &g * g.transpose();
    }
    psi /= n2;
    Ok((h, psi))
}

fn mask_indices(d: usize, mask: Option<&[bool]>) -> Result<Vec<usize>> {
    match mask {
        None => Ok((0..d).collect()),
        Some(m) => {
            if m.len() != d {
                return Err(Error::invalid("eta mask length does not match d_eta"));
            }
            let idx: Vec<usize> = m.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i).collect();
            if idx.is_empty() {
                return Err(Error::invalid("eta mask selects no coordinates"));
            }
            Ok(idx)
        }
    }
}

fn project(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])])
}

/// Maximize `M` over the masked coordinates of eta, holding the rest at the
/// system's default start. Returns the full eta vector at the solution.
fn solve_masked_mode(
    sys: &TwoModuleSystem,
    phi: &[f64],
    mask: Option<&[bool]>,
) -> Result<DVector<f64>> {
    match mask {
        None => {
            let solve = optim::solve_conditional_mode(sys, phi, None)?;
            if !solve.converged {
                return Err(Error::SolverFailure {
                    iterations: solve.iterations,
                    grad_norm: solve.grad_norm,
                });
            }
            Ok(solve.eta_hat)
        }
        Some(_) => {
            let idx = mask_indices(sys.d_eta(), mask)?;
            let base = sys.eta_start(phi);
            let embed = |x: &[f64]| {
                let mut full = base.clone();
                for (a, &k) in idx.iter().enumerate() {
                    full[k] = x[a];
                }
                full
            };
            let start = DVector::from_iterator(idx.len(), idx.iter().map(|&k| base[k]));
            let opts = NewtonOptions {
                tol_grad: 1e-8 * (sys.n2() as f64).max(1.0),
                ..NewtonOptions::default()
            };
            let res = optim::newton_maximize(
                |x| sys.criterion_eta(embed(x).as_slice(), phi),
                |x| {
                    let g = sys.grad_criterion_eta(embed(x).as_slice(), phi)?;
                    Ok(DVector::from_iterator(idx.len(), idx.iter().map(|&k| g[k])))
                },
                |x| {
                    let h = sys.hess_criterion_eta(embed(x).as_slice(), phi)?;
                    Ok(project(&h, &idx))
                },
                &start,
                &opts,
            )?;
            if !res.converged {
                return Err(Error::SolverFailure {
                    iterations: res.iterations,
                    grad_norm: res.grad_norm,
                });
            }
            Ok(embed(res.x.as_slice()))
        }
    }
}

/// Calibrated rates for both modules with the blocks that produced them.
#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub nu: f64,
    pub nu_prime: f64,
    pub phi_hat: DVector<f64>,
    pub eta_hat: DVector<f64>,
    pub sigma11: DMatrix<f64>,
    pub psi11: DMatrix<f64>,
    pub sigma22: DMatrix<f64>,
    pub psi22: DMatrix<f64>,
    pub warnings: Vec<String>,
}

fn matrix_json(m: &DMatrix<f64>) -> serde_json::Value {
    let rows: Vec<Vec<f64>> =
        (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect();
    serde_json::json!(rows)
}

impl CalibrationReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "nu": self.nu,
            "nu_prime": self.nu_prime,
            "phi_hat": self.phi_hat.as_slice(),
            "eta_hat": self.eta_hat.as_slice(),
            "sigma11": matrix_json(&self.sigma11),
            "psi11": matrix_json(&self.psi11),
            "sigma22": matrix_json(&self.sigma22),
            "psi22": matrix_json(&self.psi22),
            "warnings": self.warnings,
        })
    }
}

/// Calibrate both learning rates at the criterion modes with plug-in score
/// covariances. Fails with a singular-score error when a plug-in covariance
/// is degenerate (see the module docs for the bootstrap alternative).
pub fn calibrate(sys: &TwoModuleSystem) -> Result<CalibrationReport> {
    calibrate_masked(sys, None)
}

/// [`calibrate`] with the second-module score restricted to the eta
/// coordinates the criterion actually moves (e.g. excluding coordinates
/// that only the prior identifies).
pub fn calibrate_masked(sys: &TwoModuleSystem, eta_mask: Option<&[bool]>) -> Result<CalibrationReport> {
    let mut warnings = Vec::new();
    let phi_res = optim::maximize_module1(sys, None)?;
    if !phi_res.converged {
        return Err(Error::SolverFailure {
            iterations: phi_res.iterations,
            grad_norm: phi_res.grad_norm,
        });
    }
    let phi_hat = phi_res.x;
    let (sigma11, psi11) = module1_blocks(sys, phi_hat.as_slice())?;
    let nu = rate_from_blocks(&sigma11, &psi11)?;

    let eta_hat = solve_masked_mode(sys, phi_hat.as_slice(), eta_mask)?;
    let (sigma22, psi22) = module2_blocks(sys, eta_hat.as_slice(), phi_hat.as_slice(), eta_mask)?;
    let nu_prime = rate_from_blocks(&sigma22, &psi22)?;

    for (name, rate) in [("module 1", nu), ("module 2", nu_prime)] {
        if !(0.01..=100.0).contains(&rate) {
            warnings.push(format!("calibrated {name} rate {rate:.3e} is far from 1; check the loss scale"));
        }
    }
    Ok(CalibrationReport { nu, nu_prime, phi_hat, eta_hat, sigma11, psi11, sigma22, psi22, warnings })
}

/// Within-group resampling hook for the grouped bootstrap. Implementations
/// map Dirichlet weights over a group's raw units to a replacement
/// module-2 observation row.
pub trait GroupResampler: Send + Sync {
    /// Number of raw units inside group `i`.
    fn group_size(&self, i: usize) -> usize;
    /// Replacement observation row for group `i` under the given weights
    /// (they sum to one and match `group_size(i)` in length).
    fn replicate(&self, i: usize, weights: &[f64]) -> Vec<f64>;
}

/// Settings for [`calibrate_nu2_bootstrap`].
#[derive(Debug, Clone)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    /// Restrict the score to these eta coordinates.
    pub eta_mask: Option<Vec<bool>>,
    /// Use uniform weights instead of Dirichlet draws (testing hook: the
    /// bootstrap then reproduces the plug-in covariance exactly).
    pub uniform_weights: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { replicates: 1000, seed: 0, eta_mask: None, uniform_weights: false }
    }
}

/// Result of the grouped bootstrap calibration of the second-module rate.
#[derive(Debug, Clone)]
pub struct BootstrapCalibration {
    pub nu_prime: f64,
    pub phi_hat: DVector<f64>,
    pub eta_hat: DVector<f64>,
    pub sigma22: DMatrix<f64>,
    pub psi22: DMatrix<f64>,
    pub warnings: Vec<String>,
}

impl BootstrapCalibration {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "nu_prime": self.nu_prime,
            "phi_hat": self.phi_hat.as_slice(),
            "eta_hat": self.eta_hat.as_slice(),
            "sigma22": matrix_json(&self.sigma22),
            "psi22": matrix_json(&self.psi22),
            "warnings": self.warnings,
        })
    }
}

/// Calibrate the second-module rate with a grouped Bayesian bootstrap.
///
/// Scores are evaluated at the mode fitted to the original data; only the
/// observation rows are replaced by weighted within-group replicates. Each
/// replicate `b` uses its own random substream, so the result is
/// independent of evaluation order.
pub fn calibrate_nu2_bootstrap(
    sys: &TwoModuleSystem,
    resampler: &dyn GroupResampler,
    config: &BootstrapConfig,
) -> Result<BootstrapCalibration> {
    if config.replicates == 0 {
        return Err(Error::invalid("the bootstrap needs at least one replicate"));
    }
    let mut warnings = Vec::new();
    if config.replicates < 50 {
        warnings.push(format!(
            "only {} bootstrap replicates; the score covariance will be noisy",
            config.replicates
        ));
    }
    let mask = config.eta_mask.as_deref();
    let idx = mask_indices(sys.d_eta(), mask)?;

    let phi_res = optim::maximize_module1(sys, None)?;
    if !phi_res.converged {
        return Err(Error::SolverFailure {
            iterations: phi_res.iterations,
            grad_norm: phi_res.grad_norm,
        });
    }
    let phi_hat = phi_res.x;
    let eta_hat = solve_masked_mode(sys, phi_hat.as_slice(), mask)?;
    let (sigma22, _) = module2_blocks(sys, eta_hat.as_slice(), phi_hat.as_slice(), mask)?;

    let n2 = sys.n2();
    let k = idx.len();
    let mut psi_sum = DMatrix::zeros(k, k);
    for b in 0..config.replicates {
        let mut rng = substream(config.seed, Domain::Bootstrap, b as u64);
        let mut psi_b = DMatrix::zeros(k, k);
        for i in 0..n2 {
            let size = resampler.group_size(i);
            if size == 0 {
                return Err(Error::invalid(format!("group {i} has no raw units to resample")));
            }
            let weights = if config.uniform_weights {
                vec![1.0 / size as f64; size]
            } else {
                dirichlet_uniform(size, &mut rng)
            };
            let row = resampler.replicate(i, &weights);
            let g_full = sys.obs_grad_eta(i, Some(&row), eta_hat.as_slice(), phi_hat.as_slice())?;
            let g = DVector::from_iterator(k, idx.iter().map(|&j| g_full[j]));
            psi_b += &g * g.transpose();
        }
        psi_sum += psi_b / n2 as f64;
    }
    let psi22 = psi_sum / config.replicates as f64;
    let nu_prime = rate_from_blocks(&sigma22, &psi22)?;
    if !(0.01..=100.0).contains(&nu_prime) {
        warnings.push(format!(
            "bootstrap-calibrated rate {nu_prime:.3e} is far from 1; check the loss scale"
        ));
    }
    Ok(BootstrapCalibration { nu_prime, phi_hat, eta_hat, sigma22, psi22, warnings })
}

/// One draw from the flat Dirichlet on the simplex, via normalized
/// standard-exponential variables.
fn dirichlet_uniform<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut w: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = w.iter().sum();
        if total > 0.0 && total.is_finite() {
            for v in &mut w {
                *v /= total;
            }
            return w;
        }
    }
}
