//! Normal approximations: conditional (inner stage), marginal (first
//! module), and the two-rate joint approximation of the generalized
//! posterior.
//!
//! The conditional approximation at a fixed phi is
//! `N(eta_hat(phi), [n2 nu' J(phi)]^{-1})` with `J` the scaled curvature of
//! the second-module criterion at its mode. The marginal approximation for
//! phi is `N(phi_hat, [n1 nu S11]^{-1})`. The joint approximation couples
//! the blocks through the cross curvature of the second module with an
//! imbalance factor `theta = zeta^{-1/2}`, where `zeta` defaults to the
//! sample-size ratio `n1/n2`; its conditional eta-given-phi covariance is
//! constant in phi, unlike the exact conditional approximation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dist::{MvNormal, MvNormalPrecision};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::TwoModuleSystem;
use crate::optim::{self, InnerSolveResult};

/// Plug-in conditional normal for eta at a fixed phi.
pub struct ConditionalNormal {
    normal: MvNormalPrecision,
    solve: InnerSolveResult,
}

impl ConditionalNormal {
    pub fn mean(&self) -> &DVector<f64> {
        self.normal.mean()
    }

    /// The full precision matrix `n2 nu' J`.
    pub fn precision(&self) -> &DMatrix<f64> {
        self.normal.precision()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.normal.covariance()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        self.normal.sample(rng)
    }

    /// Normalized log density at `x`.
    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        self.normal.log_pdf(x)
    }

    /// `L^T (x - mean)` for the Cholesky factor of the precision.
    pub fn whiten(&self, x: &DVector<f64>) -> DVector<f64> {
        self.normal.whiten(x)
    }

    pub fn log_det_precision(&self) -> f64 {
        self.normal.log_det_precision()
    }

    /// Details of the inner mode solve that produced this approximation.
    pub fn solve_info(&self) -> &InnerSolveResult {
        &self.solve
    }

    pub fn into_normal(self) -> MvNormalPrecision {
        self.normal
    }
}

/// Conditional normal approximation of `pi(eta | w, phi)` at a fixed phi.
///
/// Fails with a solver error when the inner maximization does not converge;
/// callers that can tolerate rough modes should inspect
/// [`optim::solve_conditional_mode`] directly.
pub fn conditional_laplace(
    sys: &TwoModuleSystem,
    phi: &[f64],
    init: Option<&DVector<f64>>,
) -> Result<ConditionalNormal> {
    let solve = optim::solve_conditional_mode(sys, phi, init)?;
    if !solve.converged {
        return Err(Error::SolverFailure {
            iterations: solve.iterations,
            grad_norm: solve.grad_norm,
        });
    }
    conditional_from_solve(sys, solve)
}

/// Build the plug-in normal from an already-completed inner solve.
pub fn conditional_from_solve(
    sys: &TwoModuleSystem,
    solve: InnerSolveResult,
) -> Result<ConditionalNormal> {
    let n2 = sys.n2() as f64;
    let precision = &solve.j * (n2 * sys.nu_prime());
    let normal = MvNormalPrecision::new(solve.eta_hat.clone(), precision)?;
    Ok(ConditionalNormal { normal, solve })
}

/// Marginal normal approximation of the cut posterior for phi:
/// `N(phi_hat, [n1 nu S11]^{-1})` with `S11 = -(1/n1) d^2 L / d phi^2`.
pub fn marginal_laplace_phi(
    sys: &TwoModuleSystem,
    init: Option<&DVector<f64>>,
) -> Result<MvNormal> {
    let res = optim::maximize_module1(sys, init)?;
    if !res.converged {
        return Err(Error::SolverFailure { iterations: res.iterations, grad_norm: res.grad_norm });
    }
    let n1 = sys.n1() as f64;
    let h = sys.hess_criterion_phi(res.x.as_slice())?;
    let s11 = linalg::symmetrize(&(-h / n1));
    let (s11, _) = linalg::jitter_to_pd(&s11)?;
    let precision = s11 * (n1 * sys.nu());
    let cov = linalg::invert_pd(&precision, "phi marginal precision")?;
    MvNormal::new(res.x, cov)
}

/// Two-rate joint normal approximation of the generalized posterior.
pub struct JointNormal {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    d_phi: usize,
    d_eta: usize,
}

impl JointNormal {
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn d_phi(&self) -> usize {
        self.d_phi
    }

    pub fn d_eta(&self) -> usize {
        self.d_eta
    }

    /// The whole joint as a sampleable normal.
    pub fn as_mv_normal(&self) -> Result<MvNormal> {
        MvNormal::new(self.mean.clone(), self.covariance.clone())
    }

    /// Marginal normal of the phi block.
    pub fn phi_marginal(&self) -> Result<MvNormal> {
        let mean = self.mean.rows(0, self.d_phi).into_owned();
        let cov = self.covariance.view((0, 0), (self.d_phi, self.d_phi)).into_owned();
        MvNormal::new(mean, cov)
    }

    /// Marginal normal of the eta block.
    pub fn eta_marginal(&self) -> Result<MvNormal> {
        let mean = self.mean.rows(self.d_phi, self.d_eta).into_owned();
        let cov = self
            .covariance
            .view((self.d_phi, self.d_phi), (self.d_eta, self.d_eta))
            .into_owned();
        MvNormal::new(mean, cov)
    }

    /// Covariance of eta given phi under the joint normal. It does not
    /// depend on the conditioning point.
    pub fn eta_conditional_covariance(&self) -> Result<DMatrix<f64>> {
        let v11 = self.covariance.view((0, 0), (self.d_phi, self.d_phi)).into_owned();
        let v12 = self.covariance.view((0, self.d_phi), (self.d_phi, self.d_eta)).into_owned();
        let v22 = self
            .covariance
            .view((self.d_phi, self.d_phi), (self.d_eta, self.d_eta))
            .into_owned();
        let chol = linalg::cholesky(&linalg::symmetrize(&v11), "joint phi covariance")?;
        let v11_inv_v12 = chol.solve(&v12);
        Ok(linalg::symmetrize(&(v22 - v12.transpose() * v11_inv_v12)))
    }

    /// Conditional normal of eta at a given phi under the joint normal.
    pub fn eta_given_phi(&self, phi: &[f64]) -> Result<MvNormal> {
        if phi.len() != self.d_phi {
            return Err(Error::invalid("phi length does not match the joint approximation"));
        }
        let mu_phi = self.mean.rows(0, self.d_phi).into_owned();
        let mu_eta = self.mean.rows(self.d_phi, self.d_eta).into_owned();
        let v11 = self.covariance.view((0, 0), (self.d_phi, self.d_phi)).into_owned();
        let v12 = self.covariance.view((0, self.d_phi), (self.d_phi, self.d_eta)).into_owned();
        let chol = linalg::cholesky(&linalg::symmetrize(&v11), "joint phi covariance")?;
        let delta = DVector::from_column_slice(phi) - mu_phi;
        let mean = mu_eta + v12.transpose() * chol.solve(&delta);
        MvNormal::new(mean, self.eta_conditional_covariance()?)
    }
}

/// Assemble the normalized joint covariance from the block curvatures.
///
/// `a11`, `a12`, `a22` are the rate-weighted curvature blocks and `theta`
/// the imbalance factor. The result is
///
/// ```text
/// V11 = A11^{-1}
/// V12 = -theta A11^{-1} A12 A22^{-1}
/// V22 = A22^{-1} + theta^2 A22^{-1} A21 A11^{-1} A12 A22^{-1}
/// ```
pub fn assemble_joint_v(
    a11: &DMatrix<f64>,
    a12: &DMatrix<f64>,
    a22: &DMatrix<f64>,
    theta: f64,
) -> Result<DMatrix<f64>> {
    let d1 = a11.nrows();
    let d2 = a22.nrows();
    if a12.nrows() != d1 || a12.ncols() != d2 {
        return Err(Error::invalid("cross-curvature block has the wrong shape"));
    }
    if !(theta.is_finite() && theta > 0.0) {
        return Err(Error::invalid("the imbalance factor must be positive and finite"));
    }
    let chol11 = linalg::cholesky(a11, "joint phi curvature")?;
    let v11 = linalg::symmetrize(&chol11.inverse());
    let a22_inv = linalg::invert_pd(a22, "joint eta curvature")?;
    // B = A11^{-1} A12 A22^{-1}
    let b = chol11.solve(&(a12 * &a22_inv));
    let v12 = -&b * theta;
    let v22 = &a22_inv + (b.transpose() * a12 * &a22_inv) * (theta * theta);
    let mut v = DMatrix::zeros(d1 + d2, d1 + d2);
    v.view_mut((0, 0), (d1, d1)).copy_from(&v11);
    v.view_mut((0, d1), (d1, d2)).copy_from(&v12);
    v.view_mut((d1, 0), (d2, d1)).copy_from(&v12.transpose());
    v.view_mut((d1, d1), (d2, d2)).copy_from(&linalg::symmetrize(&v22));
    Ok(v)
}

/// Joint normal approximation of the generalized posterior, centered at
/// `(phi_hat, eta_hat(phi_hat))`.
///
/// `zeta` overrides the information-imbalance ratio; it defaults to
/// `n1 / n2`.
pub fn joint_laplace(sys: &TwoModuleSystem, zeta: Option<f64>) -> Result<JointNormal> {
    let n1 = sys.n1() as f64;
    let n2 = sys.n2() as f64;
    let zeta = zeta.unwrap_or(n1 / n2);
    if !(zeta.is_finite() && zeta > 0.0) {
        return Err(Error::invalid("zeta must be positive and finite"));
    }
    let theta = zeta.powf(-0.5);

    let phi_res = optim::maximize_module1(sys, None)?;
    if !phi_res.converged {
        return Err(Error::SolverFailure {
            iterations: phi_res.iterations,
            grad_norm: phi_res.grad_norm,
        });
    }
    let phi_hat = phi_res.x;
    let inner = optim::solve_conditional_mode(sys, phi_hat.as_slice(), None)?;
    if !inner.converged {
        return Err(Error::SolverFailure {
            iterations: inner.iterations,
            grad_norm: inner.grad_norm,
        });
    }

    let h11 = sys.hess_criterion_phi(phi_hat.as_slice())?;
    let s11 = linalg::symmetrize(&(-h11 / n1));
    let (s11, _) = linalg::jitter_to_pd(&s11)?;
    let s22 = inner.j.clone();
    let cross = sys.cross_hess_phi_eta(inner.eta_hat.as_slice(), phi_hat.as_slice())?;
    let s12 = -cross / n2;

    let a11 = &s11 * sys.nu();
    let a12 = &s12 * sys.nu_prime();
    let a22 = &s22 * sys.nu_prime();
    let v = assemble_joint_v(&a11, &a12, &a22, theta)?;

    // Undo the per-block rate-of-convergence normalization.
    let d_phi = sys.d_phi();
    let d_eta = sys.d_eta();
    let scale = |i: usize| if i < d_phi { n1.sqrt() } else { n2.sqrt() };
    let dim = d_phi + d_eta;
    let mut cov = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            cov[(i, j)] = v[(i, j)] / (scale(i) * scale(j));
        }
    }

    let mut mean = DVector::zeros(dim);
    mean.rows_mut(0, d_phi).copy_from(&phi_hat);
    mean.rows_mut(d_phi, d_eta).copy_from(&inner.eta_hat);
    Ok(JointNormal { mean, covariance: linalg::symmetrize(&cov), d_phi, d_eta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Flat, Module1, Module2, ObsTable, TwoModuleSystem};
    use crate::model::{EtaLoss, PhiLoss};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    /// z ~ N(phi, 1) and w ~ N(eta + phi, 1) with unit-variance NLL losses;
    /// every curvature block is available in closed form.
    struct L1;
    impl PhiLoss for L1 {
        fn eval(&self, _i: usize, obs: &[f64], phi: &[f64]) -> f64 {
            0.5 * (obs[0] - phi[0]).powi(2)
        }
    }
    struct L2;
    impl EtaLoss for L2 {
        fn eval(&self, _i: usize, obs: &[f64], eta: &[f64], phi: &[f64]) -> f64 {
            0.5 * (obs[0] - eta[0] - phi[0]).powi(2)
        }
    }

    fn toy(nu: f64, nu_prime: f64) -> TwoModuleSystem {
        let z = ObsTable::new(vec!["z".into()], vec![vec![0.2], vec![0.6], vec![0.4], vec![0.8]])
            .unwrap();
        let w = ObsTable::new(vec!["w".into()], vec![vec![1.1], vec![0.9]]).unwrap();
        TwoModuleSystem::builder(
            Module1 { data: z, loss: Arc::new(L1) },
            Module2 { data: w, loss: Arc::new(L2) },
            Arc::new(Flat),
            Arc::new(Flat),
            1,
            1,
        )
        .rates(nu, nu_prime)
        .phi_init(vec![0.0])
        .eta_init(vec![0.0])
        .build()
        .unwrap()
    }

    #[test]
    fn conditional_matches_closed_form() {
        let sys = toy(1.0, 2.0);
        let cond = conditional_laplace(&sys, &[0.3], None).unwrap();
        // eta_hat = mean(w) - phi = 1.0 - 0.3; precision = n2 * nu' * 1
        assert_relative_eq!(cond.mean()[0], 0.7, epsilon = 1e-7);
        assert_relative_eq!(cond.precision()[(0, 0)], 4.0, max_relative = 1e-6);
    }

    #[test]
    fn marginal_matches_closed_form() {
        let sys = toy(0.5, 1.0);
        let normal = marginal_laplace_phi(&sys, None).unwrap();
        // phi_hat = mean(z) = 0.5; cov = 1 / (n1 * nu) = 1 / 2
        assert_relative_eq!(normal.mean()[0], 0.5, epsilon = 1e-7);
        assert_relative_eq!(normal.covariance()[(0, 0)], 0.5, max_relative = 1e-6);
    }

    #[test]
    fn assemble_v_scalar_oracle() {
        // Hand-computed with a11 = 2, a12 = 0.5, a22 = 4, theta = 0.7:
        // v11 = 0.5
        // v12 = -0.7 * 0.5 * 0.5 * 0.25 = -0.04375
        // v22 = 0.25 + 0.49 * 0.25 * 0.5 * 0.5 * 0.25 * ... expand:
        //       a22inv + th^2 * a22inv*a21*a11inv*a12*a22inv
        //     = 0.25 + 0.49 * 0.25*0.5*0.5*0.5*0.25 = 0.25 + 0.49*0.0078125
        let a11 = DMatrix::from_row_slice(1, 1, &[2.0]);
        let a12 = DMatrix::from_row_slice(1, 1, &[0.5]);
        let a22 = DMatrix::from_row_slice(1, 1, &[4.0]);
        let v = assemble_joint_v(&a11, &a12, &a22, 0.7).unwrap();
        assert_relative_eq!(v[(0, 0)], 0.5, epsilon = 1e-14);
        assert_relative_eq!(v[(0, 1)], -0.04375, epsilon = 1e-14);
        assert_relative_eq!(v[(1, 0)], -0.04375, epsilon = 1e-14);
        assert_relative_eq!(v[(1, 1)], 0.25 + 0.49 * 0.0078125, epsilon = 1e-14);
    }

    #[test]
    fn joint_phi_block_matches_marginal() {
        let sys = toy(1.0, 1.5);
        let joint = joint_laplace(&sys, None).unwrap();
        let marginal = marginal_laplace_phi(&sys, None).unwrap();
        let phi_block = joint.phi_marginal().unwrap();
        assert_relative_eq!(phi_block.mean()[0], marginal.mean()[0], epsilon = 1e-7);
        assert_relative_eq!(
            phi_block.covariance()[(0, 0)],
            marginal.covariance()[(0, 0)],
            max_relative = 1e-6
        );
    }

    #[test]
    fn joint_conditional_covariance_matches_plug_in_at_the_mode() {
        let sys = toy(1.0, 1.5);
        let joint = joint_laplace(&sys, None).unwrap();
        let cc = joint.eta_conditional_covariance().unwrap();
        let phi_hat = joint.mean()[0];
        let cond = conditional_laplace(&sys, &[phi_hat], None).unwrap();
        let plug_in = cond.covariance();
        assert_relative_eq!(cc[(0, 0)], plug_in[(0, 0)], max_relative = 1e-5);
    }

    #[test]
    fn zeta_scales_only_the_coupling() {
        let sys = toy(1.0, 1.0);
        let a = joint_laplace(&sys, Some(1.0)).unwrap();
        let b = joint_laplace(&sys, Some(4.0)).unwrap();
        // Larger zeta means smaller theta, so weaker cross-coupling.
        let ca = a.covariance()[(0, 1)].abs();
        let cb = b.covariance()[(0, 1)].abs();
        assert!(cb < ca);
        assert_relative_eq!(
            a.covariance()[(0, 0)],
            b.covariance()[(0, 0)],
            max_relative = 1e-12
        );
    }
}
