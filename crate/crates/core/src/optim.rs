//! Newton maximization with line search, and the inner-stage mode solve.
//!
//! The inner solve finds `eta_hat(phi) = argmax_eta M(eta, phi)` together
//! with the scaled curvature `J = -(1/n2) d^2 M / d eta^2` at the mode,
//! repaired to positive definiteness when needed. The prior over eta is
//! deliberately not part of the objective; it enters the plug-in density
//! only through the conditional evidence identity.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::TwoModuleSystem;

/// Options for [`newton_maximize`].
#[derive(Debug, Clone)]
pub struct NewtonOptions {
    /// Stop when the gradient sup-norm drops below this.
    pub tol_grad: f64,
    pub max_iters: usize,
    /// Armijo sufficient-increase coefficient.
    pub armijo_c: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol_grad: 1e-8, max_iters: 200, armijo_c: 1e-4 }
    }
}

/// Outcome of a maximization run.
#[derive(Debug, Clone)]
pub struct MaximizeResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Maximize a smooth objective by Newton steps with Armijo backtracking.
///
/// The Newton direction solves `(-H) d = g`; when `-H` is not positive
/// definite even after a small ridge, the step falls back to gradient
/// ascent. An objective value of `-inf` along the search path is treated as
/// a rejected step, not an error.
pub fn newton_maximize<F, G, H>(
    f: F,
    grad: G,
    hess: H,
    x0: &DVector<f64>,
    opts: &NewtonOptions,
) -> Result<MaximizeResult>
where
    F: Fn(&[f64]) -> Result<f64>,
    G: Fn(&[f64]) -> Result<DVector<f64>>,
    H: Fn(&[f64]) -> Result<DMatrix<f64>>,
{
    let mut x = x0.clone();
    let mut fx = f(x.as_slice())?;
    if fx == f64::NEG_INFINITY {
        return Err(Error::invalid("objective is -inf at the starting point"));
    }
    let mut g = grad(x.as_slice())?;
    let mut grad_norm = g.amax();
    let mut polish_rounds = 0usize;
    for iter in 0..opts.max_iters {
        if grad_norm <= opts.tol_grad {
            return Ok(MaximizeResult { x, value: fx, grad_norm, iterations: iter, converged: true });
        }
        let h = hess(x.as_slice())?;
        let neg_h = linalg::symmetrize(&-h);
        let direction = match linalg::jitter_to_pd(&neg_h) {
            Ok((repaired, _ridge)) => {
                let chol = linalg::cholesky(&repaired, "newton step")?;
                chol.solve(&g)
            }
            Err(_) => {
                // Far from a maximum the curvature can be indefinite; take a
                // plain ascent step and let the line search pick the length.
                let scale = g.norm();
                if scale > 1.0 {
                    &g / scale
                } else {
                    g.clone()
                }
            }
        };
        let slope = g.dot(&direction);
        let resolution = 8.0 * f64::EPSILON * fx.abs().max(1.0);
        if slope.is_finite() && slope > 0.0 && slope < resolution {
            // The predicted gain is smaller than what the objective can
            // resolve in floating point, so backtracking can no longer
            // certify ascent. Take the bare Newton step while it keeps
            // shrinking the gradient, then stop.
            let candidate = &x + &direction;
            let fc = f(candidate.as_slice())?;
            if fc.is_finite() && fc >= fx - resolution {
                let gc = grad(candidate.as_slice())?;
                let gn = gc.amax();
                if gn < grad_norm {
                    x = candidate;
                    fx = fc.max(fx);
                    g = gc;
                    grad_norm = gn;
                    polish_rounds += 1;
                    if polish_rounds < 4 {
                        continue;
                    }
                }
            }
            return Ok(MaximizeResult {
                x,
                value: fx,
                grad_norm,
                iterations: iter + 1,
                converged: grad_norm <= opts.tol_grad,
            });
        }
        if !slope.is_finite() || slope <= 0.0 {
            // Not an ascent direction; gradient fallback.
            let d = &g * (1.0 / g.norm().max(1.0));
            match armijo(&f, &x, fx, &g, &d, opts.armijo_c)? {
                Some((xn, fn_)) => {
                    x = xn;
                    fx = fn_;
                }
                None => {
                    return Ok(MaximizeResult {
                        x,
                        value: fx,
                        grad_norm,
                        iterations: iter,
                        converged: grad_norm <= opts.tol_grad,
                    })
                }
            }
        } else {
            match armijo(&f, &x, fx, &g, &direction, opts.armijo_c)? {
                Some((xn, fn_)) => {
                    x = xn;
                    fx = fn_;
                }
                None => {
                    return Ok(MaximizeResult {
                        x,
                        value: fx,
                        grad_norm,
                        iterations: iter,
                        converged: grad_norm <= opts.tol_grad,
                    })
                }
            }
        }
        g = grad(x.as_slice())?;
        grad_norm = g.amax();
    }
    Ok(MaximizeResult {
        x,
        value: fx,
        grad_norm,
        iterations: opts.max_iters,
        converged: grad_norm <= opts.tol_grad,
    })
}

/// Backtracking line search; returns the accepted point or `None` when no
/// step length gives sufficient increase.
fn armijo<F>(
    f: &F,
    x: &DVector<f64>,
    fx: f64,
    g: &DVector<f64>,
    d: &DVector<f64>,
    c: f64,
) -> Result<Option<(DVector<f64>, f64)>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let slope = g.dot(d);
    let mut t = 1.0;
    for _ in 0..60 {
        let candidate = x + d * t;
        let fc = f(candidate.as_slice())?;
        if fc.is_finite() && fc >= fx + c * t * slope {
            return Ok(Some((candidate, fc)));
        }
        t *= 0.5;
    }
    Ok(None)
}

/// Result of the inner-stage mode solve at a fixed phi.
#[derive(Debug, Clone)]
pub struct InnerSolveResult {
    /// `argmax_eta M(eta, phi)`.
    pub eta_hat: DVector<f64>,
    /// `-(1/n2) d^2 M / d eta^2` at the mode, symmetrized and ridged to
    /// positive definiteness.
    pub j: DMatrix<f64>,
    /// Ridge added during the positive-definiteness repair (0 when none).
    pub jitter: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
}

/// Solve `eta_hat(phi) = argmax_eta M(eta, phi)` from `init` (or the
/// system's default start) and return the mode with its scaled curvature.
pub fn solve_conditional_mode(
    sys: &TwoModuleSystem,
    phi: &[f64],
    init: Option<&DVector<f64>>,
) -> Result<InnerSolveResult> {
    let n2 = sys.n2() as f64;
    let start = match init {
        Some(v) => v.clone(),
        None => sys.eta_start(phi),
    };
    let opts = NewtonOptions {
        // M is a sum over n2 observations, so the gradient tolerance scales
        // with the sample size.
        tol_grad: 1e-8 * n2.max(1.0),
        ..NewtonOptions::default()
    };
    let res = newton_maximize(
        |e| sys.criterion_eta(e, phi),
        |e| sys.grad_criterion_eta(e, phi),
        |e| sys.hess_criterion_eta(e, phi),
        &start,
        &opts,
    )?;
    let h = sys.hess_criterion_eta(res.x.as_slice(), phi)?;
    let scaled = linalg::symmetrize(&(-h / n2));
    let (j, jitter) = linalg::jitter_to_pd(&scaled)?;
    Ok(InnerSolveResult {
        eta_hat: res.x,
        j,
        jitter,
        converged: res.converged,
        iterations: res.iterations,
        grad_norm: res.grad_norm,
    })
}

/// Maximize the first-module criterion `L(phi)` from `init` (or the
/// system's registered phi start).
pub fn maximize_module1(
    sys: &TwoModuleSystem,
    init: Option<&DVector<f64>>,
) -> Result<MaximizeResult> {
    let n1 = sys.n1() as f64;
    let start = match init {
        Some(v) => v.clone(),
        None => sys
            .phi_init()
            .cloned()
            .ok_or_else(|| Error::invalid("no starting point for the module-1 maximization"))?,
    };
    let opts = NewtonOptions { tol_grad: 1e-8 * n1.max(1.0), ..NewtonOptions::default() };
    newton_maximize(
        |p| sys.criterion_phi(p),
        |p| sys.grad_criterion_phi(p),
        |p| sys.hess_criterion_phi(p),
        &start,
        &opts,
    )
}
