//! Central finite differences used wherever a model does not supply analytic
//! derivatives.
//!
//! Step sizes follow the usual error-balancing rules: `eps^(1/3) * max(1,|x|)`
//! for first differences (also for differencing an analytic gradient into a
//! Hessian) and `eps^(1/4) * max(1,|x|)` for second differences taken directly
//! on function values.
//!
//! A `-inf` or NaN value at a probe point is reported as a pathological
//! evaluation: it means the stencil crossed a support boundary, and the fix is
//! an analytic derivative or an interior evaluation point, not a silent
//! one-sided estimate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Step for first central differences at coordinate value `x`.
pub fn step_first(x: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(1.0)
}

/// Step for second central differences taken on function values.
pub fn step_second(x: f64) -> f64 {
    f64::EPSILON.powf(0.25) * x.abs().max(1.0)
}

fn probe<F>(f: &F, x: &[f64], context: &str) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let v = f(x)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::PathologicalEval {
            context: format!("{context} (finite-difference probe left the support; supply an analytic derivative or an interior point)"),
            value: v,
        })
    }
}

/// Gradient of `f` at `x` by central differences.
pub fn grad_central<F>(f: F, x: &[f64]) -> Result<DVector<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let d = x.len();
    let mut g = DVector::zeros(d);
    let mut work = x.to_vec();
    for i in 0..d {
        let h = step_first(x[i]);
        work[i] = x[i] + h;
        let fp = probe(&f, &work, "gradient")?;
        work[i] = x[i] - h;
        let fm = probe(&f, &work, "gradient")?;
        work[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Hessian of `f` at `x` by second central differences on function values.
///
/// Symmetric by construction (each off-diagonal entry is computed once from
/// the four-point stencil).
pub fn hess_central<F>(f: F, x: &[f64]) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let d = x.len();
    let mut h = DMatrix::zeros(d, d);
    let f0 = probe(&f, x, "hessian")?;
    let mut work = x.to_vec();
    for i in 0..d {
        let hi = step_second(x[i]);
        work[i] = x[i] + hi;
        let fp = probe(&f, &work, "hessian")?;
        work[i] = x[i] - hi;
        let fm = probe(&f, &work, "hessian")?;
        work[i] = x[i];
        h[(i, i)] = (fp - 2.0 * f0 + fm) / (hi * hi);
    }
    for i in 0..d {
        let hi = step_second(x[i]);
        for j in (i + 1)..d {
            let hj = step_second(x[j]);
            work[i] = x[i] + hi;
            work[j] = x[j] + hj;
            let fpp = probe(&f, &work, "hessian")?;
            work[j] = x[j] - hj;
            let fpm = probe(&f, &work, "hessian")?;
            work[i] = x[i] - hi;
            work[j] = x[j] + hj;
            let fmp = probe(&f, &work, "hessian")?;
            work[j] = x[j] - hj;
            let fmm = probe(&f, &work, "hessian")?;
            work[i] = x[i];
            work[j] = x[j];
            let v = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

/// Hessian from an analytic gradient: central difference of `grad`, then
/// symmetrized as `(H + H^T)/2`.
pub fn hess_from_grad<G>(grad: G, x: &[f64]) -> Result<DMatrix<f64>>
where
    G: Fn(&[f64]) -> Result<DVector<f64>>,
{
    let d = x.len();
    let mut h = DMatrix::zeros(d, d);
    let mut work = x.to_vec();
    for i in 0..d {
        let hi = step_first(x[i]);
        work[i] = x[i] + hi;
        let gp = grad(&work)?;
        work[i] = x[i] - hi;
        let gm = grad(&work)?;
        work[i] = x[i];
        if gp.len() != d || gm.len() != d {
            return Err(Error::invalid("gradient length does not match point dimension"));
        }
        for j in 0..d {
            h[(i, j)] = (gp[j] - gm[j]) / (2.0 * hi);
        }
    }
    let ht = h.transpose();
    Ok((h + ht) * 0.5)
}
