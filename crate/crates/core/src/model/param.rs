//! Named, validated parameter vectors for the public API boundary.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// A parameter vector with coordinate names.
///
/// Construction enforces the two invariants everything downstream relies on:
/// the value and name lengths agree, and every value is finite. Hot paths
/// inside the samplers work on raw slices; this type is the checked form used
/// at API boundaries and in sample output.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    names: Vec<String>,
    values: DVector<f64>,
}

impl ParamVector {
    pub fn new(names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if names.len() != values.len() {
            return Err(Error::invalid(format!(
                "parameter vector has {} names but {} values",
                names.len(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite parameter value {v}")));
        }
        Ok(Self { names, values: DVector::from_vec(values) })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.len() == 0
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }

    /// Value looked up by coordinate name.
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    /// Split into a `(phi, eta)` pair at `d_phi` coordinates.
    pub fn split(&self, d_phi: usize) -> Result<(&[f64], &[f64])> {
        if d_phi > self.len() {
            return Err(Error::invalid(format!(
                "cannot split a {}-dimensional parameter vector at {d_phi}",
                self.len()
            )));
        }
        let s = self.values.as_slice();
        Ok((&s[..d_phi], &s[d_phi..]))
    }
}
