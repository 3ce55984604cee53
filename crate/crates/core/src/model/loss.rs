//! Per-observation loss traits.
//!
//! A loss plays the role of a negative log-likelihood contribution: module 1
//! charges `l(z_i, phi)` for observation `i`, module 2 charges
//! `m(w_i, eta, phi)`. The module criteria are the negated sums, so *small*
//! losses mean good fit and the criteria are maximized.
//!
//! Analytic derivatives are optional. A loss that implements `grad`/`hess`
//! must do so for every observation — the system probes observation 0 and
//! then assumes homogeneity — and the derivatives are taken with respect to
//! the module's own parameter block (phi for module 1, eta for module 2).

use nalgebra::{DMatrix, DVector};

/// Loss for the first module, `l(z_i, phi)`.
pub trait PhiLoss: Send + Sync {
    /// Loss of observation `i` (with its table row `obs`) at `phi`.
    ///
    /// `+inf` means an infinitely bad fit and maps to a `-inf` log density;
    /// NaN and `-inf` are treated as pathological by the caller.
    fn eval(&self, i: usize, obs: &[f64], phi: &[f64]) -> f64;

    /// Gradient of the per-observation loss with respect to phi.
    fn grad(&self, _i: usize, _obs: &[f64], _phi: &[f64]) -> Option<DVector<f64>> {
        None
    }

    /// Hessian of the per-observation loss with respect to phi.
    fn hess(&self, _i: usize, _obs: &[f64], _phi: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

/// Loss for the second module, `m(w_i, eta, phi)`.
pub trait EtaLoss: Send + Sync {
    /// Loss of observation `i` (with its table row `obs`) at `(eta, phi)`.
    ///
    /// Same value conventions as [`PhiLoss::eval`].
    fn eval(&self, i: usize, obs: &[f64], eta: &[f64], phi: &[f64]) -> f64;

    /// Gradient of the per-observation loss with respect to eta.
    fn grad_eta(&self, _i: usize, _obs: &[f64], _eta: &[f64], _phi: &[f64]) -> Option<DVector<f64>> {
        None
    }

    /// Hessian of the per-observation loss with respect to eta.
    fn hess_eta(&self, _i: usize, _obs: &[f64], _eta: &[f64], _phi: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}
