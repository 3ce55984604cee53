//! Multivariate normal and Student-t helpers used by the Laplace objects, the
//! SIR proposal machinery, and the diagnostics. Both distributions carry their
//! Cholesky factor so sampling and density evaluation share one factorization.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg;

const LN_2PI: f64 = 1.8378770664093453;

/// Multivariate normal parameterized by mean and covariance.
#[derive(Clone, Debug)]
pub struct MvNormal {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    /// Lower Cholesky factor of the covariance.
    chol_l: DMatrix<f64>,
    log_det_cov: f64,
}

impl MvNormal {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if mean.len() != covariance.nrows() || !covariance.is_square() {
            return Err(Error::invalid("mean/covariance dimensions do not match"));
        }
        if mean.iter().any(|v| !v.is_finite()) || covariance.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite entries in normal parameters"));
        }
        let chol = linalg::cholesky(&covariance, "multivariate normal covariance")?;
        let log_det_cov = linalg::log_det_pd(&chol);
        Ok(Self { mean, covariance, chol_l: chol.l(), log_det_cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.chol_l * z
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.mean;
        let u = self
            .chol_l
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor is nonsingular by construction");
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det_cov + u.norm_squared())
    }
}

/// Multivariate normal parameterized by mean and *precision*. This is the
/// natural form for Laplace objects, where the precision is assembled directly
/// from curvature.
#[derive(Clone, Debug)]
pub struct MvNormalPrecision {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
    /// Lower Cholesky factor of the precision.
    chol_l: DMatrix<f64>,
    log_det_precision: f64,
}

impl MvNormalPrecision {
    pub fn new(mean: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        if mean.len() != precision.nrows() || !precision.is_square() {
            return Err(Error::invalid("mean/precision dimensions do not match"));
        }
        if mean.iter().any(|v| !v.is_finite()) || precision.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite entries in normal parameters"));
        }
        let chol = linalg::cholesky(&precision, "multivariate normal precision")?;
        let log_det_precision = linalg::log_det_pd(&chol);
        Ok(Self { mean, precision, chol_l: chol.l(), log_det_precision })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn log_det_precision(&self) -> f64 {
        self.log_det_precision
    }

    /// Covariance, materialized on demand.
    pub fn covariance(&self) -> DMatrix<f64> {
        linalg::invert_pd(&self.precision, "precision inversion")
            .expect("precision is PD by construction")
    }

    /// With precision `P = L L^T`, `x = mean + L^{-T} z` has covariance
    /// `L^{-T} L^{-1} = P^{-1}`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let u = self
            .chol_l
            .transpose()
            .solve_upper_triangular(&z)
            .expect("Cholesky factor is nonsingular by construction");
        &self.mean + u
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.mean;
        // (x-m)^T P (x-m) = || L^T (x-m) ||^2
        let q = (self.chol_l.transpose() * diff).norm_squared();
        -0.5 * (self.dim() as f64 * LN_2PI - self.log_det_precision + q)
    }

    /// Whitened residual `L^T (x - mean)`; identity covariance under the
    /// distribution itself.
    pub fn whiten(&self, x: &DVector<f64>) -> DVector<f64> {
        self.chol_l.transpose() * (x - &self.mean)
    }
}

/// Multivariate Student-t with location, scale matrix, and degrees of freedom.
#[derive(Clone, Debug)]
pub struct MvStudentT {
    location: DVector<f64>,
    chol_l: DMatrix<f64>,
    log_det_scale: f64,
    dof: f64,
}

impl MvStudentT {
    pub fn new(location: DVector<f64>, scale: DMatrix<f64>, dof: f64) -> Result<Self> {
        if location.len() != scale.nrows() || !scale.is_square() {
            return Err(Error::invalid("location/scale dimensions do not match"));
        }
        if !(dof.is_finite() && dof > 0.0) {
            return Err(Error::invalid("Student-t degrees of freedom must be positive"));
        }
        let chol = linalg::cholesky(&scale, "Student-t scale matrix")?;
        let log_det_scale = linalg::log_det_pd(&chol);
        Ok(Self { location, chol_l: chol.l(), log_det_scale, dof })
    }

    pub fn dim(&self) -> usize {
        self.location.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let chi = ChiSquared::new(self.dof).expect("dof validated at construction");
        let g: f64 = chi.sample(rng);
        &self.location + self.chol_l.clone() * z * (self.dof / g).sqrt()
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let d = self.dim() as f64;
        let diff = x - &self.location;
        let u = self
            .chol_l
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor is nonsingular by construction");
        let q = u.norm_squared();
        ln_gamma(0.5 * (self.dof + d))
            - ln_gamma(0.5 * self.dof)
            - 0.5 * d * (self.dof * std::f64::consts::PI).ln()
            - 0.5 * self.log_det_scale
            - 0.5 * (self.dof + d) * (q / self.dof).ln_1p()
    }
}
