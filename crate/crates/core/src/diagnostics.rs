//! Uncertainty-propagation diagnostics and distribution distances.
//!
//! The propagation table tabulates, over a set of phi draws, the
//! conditional mode and covariance of eta; moment decompositions split the
//! marginal uncertainty of eta into within-phi and between-phi parts.
//! Credible-set Monte Carlo checks the coverage geometry of a plug-in
//! normal by whitening with the Cholesky factor of its precision. The
//! distance helpers (one-dimensional Wasserstein, two-sample
//! Kolmogorov-Smirnov) quantify agreement between sampled posteriors.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dist::MvNormalPrecision;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ObsTable, SampleSet, TwoModuleSystem};
use crate::optim;
use crate::seeding::{substream, Domain};

/// Conditional mode and covariance of eta tabulated over phi draws.
pub struct PropagationTable {
    phi_names: Vec<String>,
    eta_names: Vec<String>,
    pub phi: Vec<DVector<f64>>,
    /// Conditional mode of eta at each phi.
    pub mu: Vec<DVector<f64>>,
    /// Conditional covariance of eta at each phi.
    pub sigma: Vec<DMatrix<f64>>,
    pub log_det_sigma: Vec<f64>,
    /// Rows dropped because the inner solve failed.
    pub n_failures: usize,
}

/// Solve the conditional problem at every phi (in parallel; each row is
/// independent and starts from the same anchor, so the result does not
/// depend on scheduling). Rows whose solve fails for a numerical reason are
/// dropped; more than 5% failures abort.
pub fn propagation_table(
    sys: &TwoModuleSystem,
    phis: &[DVector<f64>],
) -> Result<PropagationTable> {
    if phis.is_empty() {
        return Err(Error::invalid("no phi draws to propagate"));
    }
    let n2 = sys.n2() as f64;
    let nu_prime = sys.nu_prime();
    let results: Vec<std::result::Result<(DVector<f64>, DMatrix<f64>, f64), Option<Error>>> = phis
        .par_iter()
        .map(|phi| {
            let solve = optim::solve_conditional_mode(sys, phi.as_slice(), None).map_err(|e| {
                match e {
                    Error::SolverFailure { .. }
                    | Error::IndefiniteHessian { .. }
                    | Error::SingularMatrix { .. } => None,
                    fatal => Some(fatal),
                }
            })?;
            if !solve.converged {
                return Err(None);
            }
            let precision = &solve.j * (n2 * nu_prime);
            let chol = linalg::cholesky(&precision, "propagation precision").map_err(|_| None)?;
            let sigma = linalg::symmetrize(&chol.inverse());
            let log_det_sigma = -linalg::log_det_pd(&chol);
            Ok((solve.eta_hat, sigma, log_det_sigma))
        })
        .collect();

    let mut table = PropagationTable {
        phi_names: sys.phi_names().to_vec(),
        eta_names: sys.eta_names().to_vec(),
        phi: Vec::new(),
        mu: Vec::new(),
        sigma: Vec::new(),
        log_det_sigma: Vec::new(),
        n_failures: 0,
    };
    for (phi, res) in phis.iter().zip(results) {
        match res {
            Ok((mu, sigma, ld)) => {
                table.phi.push(phi.clone());
                table.mu.push(mu);
                table.sigma.push(sigma);
                table.log_det_sigma.push(ld);
            }
            Err(None) => table.n_failures += 1,
            Err(Some(fatal)) => return Err(fatal),
        }
    }
    let total = phis.len();
    if (table.n_failures as f64) > 0.05 * total as f64 {
        return Err(Error::TooManyInnerFailures { failed: table.n_failures, total });
    }
    Ok(table)
}

/// As [`propagation_table`], taking the phi block from a sample set whose
/// leading columns are the system's phi coordinates.
pub fn propagation_from_samples(
    sys: &TwoModuleSystem,
    samples: &SampleSet,
) -> Result<PropagationTable> {
    let d_phi = sys.d_phi();
    if samples.dim() < d_phi || samples.names()[..d_phi] != sys.phi_names()[..] {
        return Err(Error::invalid("sample columns do not start with the system's phi block"));
    }
    let phis: Vec<DVector<f64>> = (0..samples.n_draws())
        .map(|i| DVector::from_iterator(d_phi, (0..d_phi).map(|j| samples.draws()[(i, j)])))
        .collect();
    propagation_table(sys, &phis)
}

impl PropagationTable {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// Flatten to a table: phi, conditional means, conditional variances,
    /// and the log determinant of the conditional covariance.
    pub fn to_table(&self) -> Result<ObsTable> {
        let mut columns: Vec<String> = self.phi_names.clone();
        columns.extend(self.eta_names.iter().map(|n| format!("mu_{n}")));
        columns.extend(self.eta_names.iter().map(|n| format!("var_{n}")));
        columns.push("log_det_sigma".to_string());
        let rows: Vec<Vec<f64>> = (0..self.len())
            .map(|i| {
                let mut row: Vec<f64> = self.phi[i].iter().copied().collect();
                row.extend(self.mu[i].iter().copied());
                row.extend(self.sigma[i].diagonal().iter().copied());
                row.push(self.log_det_sigma[i]);
                row
            })
            .collect();
        ObsTable::new(columns, rows)
    }
}

/// Split of the marginal covariance of eta into mean within-phi covariance
/// and between-phi covariance of the conditional modes.
pub struct TotalVariance {
    /// Average of the conditional covariances.
    pub within: DMatrix<f64>,
    /// Sample covariance of the conditional modes (denominator S-1).
    pub between: DMatrix<f64>,
    /// `within + between`.
    pub total: DMatrix<f64>,
}

/// Decompose the marginal covariance of eta implied by the table's
/// normal mixture.
pub fn total_variance_decomposition(table: &PropagationTable) -> Result<TotalVariance> {
    let s = table.len();
    if s < 2 {
        return Err(Error::invalid("need at least two propagated rows"));
    }
    let d = table.mu[0].len();
    let mut within = DMatrix::zeros(d, d);
    for sigma in &table.sigma {
        within += sigma;
    }
    within /= s as f64;
    let mut mean = DVector::zeros(d);
    for mu in &table.mu {
        mean += mu;
    }
    mean /= s as f64;
    let mut between = DMatrix::zeros(d, d);
    for mu in &table.mu {
        let dev = mu - &mean;
        between += &dev * dev.transpose();
    }
    between /= (s - 1) as f64;
    let total = &within + &between;
    Ok(TotalVariance { within, between, total })
}

/// Split of the per-coordinate third cumulant of eta's mixture marginal:
/// the third central moment of the conditional modes plus three times the
/// covariance between mode and conditional variance. Plain `1/S` averages
/// make the split exact for the empirical mixture.
pub struct ThirdCumulant {
    pub mode_skew_part: DVector<f64>,
    pub mode_variance_coupling: DVector<f64>,
    pub total: DVector<f64>,
}

/// Per-coordinate third-cumulant decomposition of the table's mixture.
pub fn third_cumulant_decomposition(table: &PropagationTable) -> Result<ThirdCumulant> {
    let s = table.len();
    if s < 2 {
        return Err(Error::invalid("need at least two propagated rows"));
    }
    let d = table.mu[0].len();
    let sf = s as f64;
    let mut mean = DVector::zeros(d);
    for mu in &table.mu {
        mean += mu;
    }
    mean /= sf;
    let mut m3 = DVector::zeros(d);
    let mut coupling = DVector::zeros(d);
    let mut sigma_mean = DVector::zeros(d);
    for sigma in &table.sigma {
        sigma_mean += sigma.diagonal();
    }
    sigma_mean /= sf;
    for (mu, sigma) in table.mu.iter().zip(&table.sigma) {
        for k in 0..d {
            let dev = mu[k] - mean[k];
            m3[k] += dev * dev * dev;
            coupling[k] += dev * (sigma[(k, k)] - sigma_mean[k]);
        }
    }
    m3 /= sf;
    coupling *= 3.0 / sf;
    let total = &m3 + &coupling;
    Ok(ThirdCumulant { mode_skew_part: m3, mode_variance_coupling: coupling, total })
}

/// Monte Carlo draws retained inside the elliptical credible set of a
/// plug-in normal.
pub struct CredibleSetMc {
    pub retained: Vec<DVector<f64>>,
    pub n_total: usize,
    pub retention_rate: f64,
    /// Squared whitened radius of the set boundary.
    pub radius_sq: f64,
}

/// Sample the plug-in normal and keep draws whose precision-whitened norm
/// lies inside the chi-square radius for the requested level.
///
/// Whitening uses the Cholesky factor of the precision itself, which is
/// the choice that makes the retention rate match `1 - alpha` exactly in
/// distribution.
pub fn credible_set_mc(
    normal: &MvNormalPrecision,
    alpha: f64,
    n_mc: usize,
    seed: u64,
) -> Result<CredibleSetMc> {
    if !(0.0 < alpha && alpha <= 1.0) {
        return Err(Error::invalid("alpha must lie in (0, 1]"));
    }
    if n_mc == 0 {
        return Err(Error::invalid("need at least one Monte Carlo draw"));
    }
    let d = normal.mean().len();
    let chi2 = statrs::distribution::ChiSquared::new(d as f64)
        .map_err(|e| Error::invalid(format!("chi-square setup failed: {e}")))?;
    use statrs::distribution::ContinuousCDF;
    // At alpha = 1 the set degenerates to the mean point; its interior is
    // empty, so nothing is retained.
    let radius_sq = if alpha >= 1.0 { 0.0 } else { chi2.inverse_cdf(1.0 - alpha) };
    let mut rng = substream(seed, Domain::CredibleSet, 0);
    let mut retained = Vec::new();
    for _ in 0..n_mc {
        let z = normal.sample(&mut rng);
        let y = normal.whiten(&z);
        if radius_sq > 0.0 && y.norm_squared() <= radius_sq {
            retained.push(z);
        }
    }
    let retention_rate = retained.len() as f64 / n_mc as f64;
    Ok(CredibleSetMc { retained, n_total: n_mc, retention_rate, radius_sq })
}

/// Points on the boundary ellipse of a two-dimensional normal credible set.
pub fn ellipse_boundary(
    mean: &DVector<f64>,
    covariance: &DMatrix<f64>,
    radius_sq: f64,
    n_points: usize,
) -> Result<Vec<(f64, f64)>> {
    if mean.len() != 2 || covariance.nrows() != 2 || covariance.ncols() != 2 {
        return Err(Error::invalid("the boundary ellipse is only defined in two dimensions"));
    }
    if !(radius_sq.is_finite() && radius_sq > 0.0) {
        return Err(Error::invalid("radius_sq must be positive"));
    }
    let chol = linalg::cholesky(&linalg::symmetrize(covariance), "ellipse covariance")?;
    let l = chol.l();
    let r = radius_sq.sqrt();
    let mut out = Vec::with_capacity(n_points);
    for k in 0..n_points {
        let angle = 2.0 * std::f64::consts::PI * (k as f64) / (n_points as f64);
        let u = DVector::from_vec(vec![r * angle.cos(), r * angle.sin()]);
        let p = mean + &l * u;
        out.push((p[0], p[1]));
    }
    Ok(out)
}

/// Exact one-dimensional Wasserstein-1 distance between two empirical
/// distributions (possibly of different sizes).
pub fn wasserstein1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("empty sample in Wasserstein distance"));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite sample in Wasserstein distance"));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
    if xs.len() == ys.len() {
        let n = xs.len() as f64;
        return Ok(xs.iter().zip(&ys).map(|(x, y)| (x - y).abs()).sum::<f64>() / n);
    }
    // Unequal sizes: integrate |F_a^{-1}(u) - F_b^{-1}(u)| over the merged
    // step grid of both empirical quantile functions.
    let n = xs.len();
    let m = ys.len();
    let mut ia = 0usize;
    let mut ib = 0usize;
    let mut u = 0.0f64;
    let mut total = 0.0f64;
    while ia < n && ib < m {
        let ua = (ia + 1) as f64 / n as f64;
        let ub = (ib + 1) as f64 / m as f64;
        let next = ua.min(ub);
        total += (xs[ia] - ys[ib]).abs() * (next - u);
        u = next;
        if ua <= next + f64::EPSILON {
            ia += 1;
        }
        if ub <= next + f64::EPSILON {
            ib += 1;
        }
    }
    Ok(total)
}

/// Two-sample Kolmogorov-Smirnov statistic and its asymptotic p-value.
pub fn ks2(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("empty sample in the Kolmogorov-Smirnov test"));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite sample in the Kolmogorov-Smirnov test"));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let n = xs.len();
    let m = ys.len();
    let mut ia = 0usize;
    let mut ib = 0usize;
    let mut d = 0.0f64;
    while ia < n && ib < m {
        let x = xs[ia];
        let y = ys[ib];
        let t = x.min(y);
        while ia < n && xs[ia] <= t {
            ia += 1;
        }
        while ib < m && ys[ib] <= t {
            ib += 1;
        }
        let fa = ia as f64 / n as f64;
        let fb = ib as f64 / m as f64;
        d = d.max((fa - fb).abs());
    }
    let ne = (n as f64 * m as f64) / (n as f64 + m as f64);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    Ok((d, kolmogorov_survival(lambda)))
}

/// Asymptotic Kolmogorov survival function
/// `Q(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2)`.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0f64;
    let mut sign = 1.0f64;
    for k in 1..=101 {
        let term = (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
