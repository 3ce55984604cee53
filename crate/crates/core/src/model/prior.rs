//! Prior traits and a few stock implementations.
//!
//! All log densities are unnormalized and return `-inf` outside the support;
//! improper priors are first-class citizens (several of the shipped models use
//! them).

/// Prior over the first-module parameter phi.
pub trait PhiPrior: Send + Sync {
    /// Unnormalized log density; `-inf` outside the support.
    fn log_density(&self, phi: &[f64]) -> f64;

    fn in_support(&self, phi: &[f64]) -> bool {
        self.log_density(phi) > f64::NEG_INFINITY
    }
}

/// Conditional prior over the second-module parameter eta given phi.
pub trait EtaPrior: Send + Sync {
    /// Unnormalized log density; `-inf` outside the support.
    fn log_density(&self, eta: &[f64], phi: &[f64]) -> f64;

    fn in_support(&self, eta: &[f64], phi: &[f64]) -> bool {
        self.log_density(eta, phi) > f64::NEG_INFINITY
    }

    /// Mean of the conditional prior when it has one; used as a default
    /// starting point for inner solves and nested chains.
    fn mean(&self, _phi: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// Flat (improper) prior on all of R^d. Valid as either prior.
#[derive(Clone, Copy, Debug, Default)]
pub struct Flat;

impl PhiPrior for Flat {
    fn log_density(&self, _phi: &[f64]) -> f64 {
        0.0
    }
}

impl EtaPrior for Flat {
    fn log_density(&self, _eta: &[f64], _phi: &[f64]) -> f64 {
        0.0
    }
}

/// Uniform prior on the open unit cube `(0, 1)^d`.
#[derive(Clone, Copy, Debug, Default)]
pub struct UnitCube;

impl PhiPrior for UnitCube {
    fn log_density(&self, phi: &[f64]) -> f64 {
        if phi.iter().all(|&v| v > 0.0 && v < 1.0) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Improper prior proportional to `prod_i x_i^{-1}` on the positive orthant.
#[derive(Clone, Copy, Debug, Default)]
pub struct PositiveReciprocal;

impl PhiPrior for PositiveReciprocal {
    fn log_density(&self, phi: &[f64]) -> f64 {
        let mut total = 0.0;
        for &v in phi {
            if v <= 0.0 {
                return f64::NEG_INFINITY;
            }
            total -= v.ln();
        }
        total
    }
}

/// Independent normal coordinates with shared or per-coordinate parameters.
#[derive(Clone, Debug)]
pub struct IndependentNormal {
    means: Vec<f64>,
    sds: Vec<f64>,
}

impl IndependentNormal {
    /// Same `(mean, sd)` for each of `d` coordinates.
    pub fn isotropic(d: usize, mean: f64, sd: f64) -> Self {
        assert!(sd > 0.0, "standard deviation must be positive");
        Self { means: vec![mean; d], sds: vec![sd; d] }
    }

    pub fn new(means: Vec<f64>, sds: Vec<f64>) -> Self {
        assert_eq!(means.len(), sds.len());
        assert!(sds.iter().all(|&s| s > 0.0), "standard deviations must be positive");
        Self { means, sds }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.means.len());
        let mut total = 0.0;
        for i in 0..x.len() {
            let z = (x[i] - self.means[i]) / self.sds[i];
            total -= 0.5 * z * z + self.sds[i].ln();
        }
        total
    }
}

impl PhiPrior for IndependentNormal {
    fn log_density(&self, phi: &[f64]) -> f64 {
        self.eval(phi)
    }
}

impl EtaPrior for IndependentNormal {
    fn log_density(&self, eta: &[f64], _phi: &[f64]) -> f64 {
        self.eval(eta)
    }

    fn mean(&self, _phi: &[f64]) -> Option<Vec<f64>> {
        Some(self.means.clone())
    }
}
