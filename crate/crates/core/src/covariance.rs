//! Empirical semivariograms, the spherical covariance model and its fit.
//!
//! The fit minimises a weighted sum of squares between binned empirical
//! semivariances and the model semivariogram `γ(h) = C(0) − C(h)` (nugget
//! counted only for `h > 0`). Bin weights are `N_b / γ̂_b²`. The solver is a
//! damped Gauss-Newton (Levenberg-Marquardt) iteration with an explicit
//! iteration cap; exhausting the cap marks the fit as not converged, which
//! the interpolators treat as a reason to fall back to IDW.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geo::DistanceMatrix;
use crate::linalg;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CovarianceError {
    #[error("negative lag {0}")]
    NegativeLag(f64),
    #[error("invalid covariance model: {0}")]
    InvalidModel(String),
    #[error("insufficient data: need at least 2 present values, got {0}")]
    InsufficientData(usize),
    #[error("insufficient variogram bins: need at least 3, got {0}")]
    InsufficientBins(usize),
    #[error("degenerate field: all semivariances are zero")]
    DegenerateField,
    #[error("covariance fit did not converge within {0} iterations")]
    NonConvergence(usize),
    #[error("singular design matrix")]
    SingularDesign,
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Spherical covariance with partial sill `sigma2`, practical range `alpha`
/// (km) and an optional nugget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalModel {
    pub sigma2: f64,
    pub alpha: f64,
    pub nugget: f64,
}

impl SphericalModel {
    pub fn new(sigma2: f64, alpha: f64, nugget: f64) -> Result<Self, CovarianceError> {
        let m = SphericalModel {
            sigma2,
            alpha,
            nugget,
        };
        m.check()?;
        Ok(m)
    }

    pub fn check(&self) -> Result<(), CovarianceError> {
        if !(self.sigma2.is_finite() && self.sigma2 >= 0.0) {
            return Err(CovarianceError::InvalidModel(format!("sigma2 = {}", self.sigma2)));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(CovarianceError::InvalidModel(format!("alpha = {}", self.alpha)));
        }
        if !(self.nugget.is_finite() && self.nugget >= 0.0) {
            return Err(CovarianceError::InvalidModel(format!("nugget = {}", self.nugget)));
        }
        Ok(())
    }

    /// Total sill, `C(0)`.
    pub fn sill(&self) -> f64 {
        self.nugget + self.sigma2
    }

    /// Covariance at lag `h` km.
    pub fn covariance(&self, h: f64) -> Result<f64, CovarianceError> {
        if h < 0.0 || h.is_nan() {
            return Err(CovarianceError::NegativeLag(h));
        }
        Ok(self.covariance_unchecked(h))
    }

    #[inline]
    pub(crate) fn covariance_unchecked(&self, h: f64) -> f64 {
        if h == 0.0 {
            return self.nugget + self.sigma2;
        }
        self.sigma2 * spherical_correlation(h / self.alpha)
    }

    /// Semivariance at lag `h` km, `C(0) − C(h)`.
    pub fn semivariance(&self, h: f64) -> Result<f64, CovarianceError> {
        Ok(self.sill() - self.covariance(h)?)
    }
}

/// `1 − 1.5u + 0.5u³` on `[0, 1]`, zero beyond.
#[inline]
fn spherical_correlation(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else {
        1.0 - 1.5 * u + 0.5 * u * u * u
    }
}

/// Standalone form of [`SphericalModel::covariance`].
pub fn covariance_eval(model: &SphericalModel, lag: f64) -> Result<f64, CovarianceError> {
    model.covariance(lag)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariogramBin {
    /// Mean pair distance in the bin, km.
    pub lag: f64,
    pub semivariance: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalVariogram {
    pub bins: Vec<VariogramBin>,
    pub cutoff: f64,
    /// Sample variance of the values the bins were computed from; used as
    /// the default starting sill.
    pub sample_variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariogramOptions {
    /// Largest pair distance considered. `None` means one third of the
    /// largest pairwise distance.
    pub cutoff: Option<f64>,
    pub n_bins: usize,
}

impl Default for VariogramOptions {
    fn default() -> Self {
        VariogramOptions {
            cutoff: None,
            n_bins: 15,
        }
    }
}

/// Matheron estimator over equal-width bins on `[0, cutoff]`. Missing values
/// are skipped; empty bins are dropped.
pub fn empirical_semivariogram(
    values: &[Option<f64>],
    distances: &DistanceMatrix,
    opts: &VariogramOptions,
) -> Result<EmpiricalVariogram, CovarianceError> {
    assert_eq!(values.len(), distances.len(), "values/distances length mismatch");
    let present: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    if present.len() < 2 {
        return Err(CovarianceError::InsufficientData(present.len()));
    }
    if opts.n_bins == 0 {
        return Err(CovarianceError::InvalidModel("n_bins must be at least 1".into()));
    }
    let cutoff = match opts.cutoff {
        Some(c) => c,
        None => {
            let mut max_d: f64 = 0.0;
            for (a, &(i, _)) in present.iter().enumerate() {
                for &(j, _) in &present[a + 1..] {
                    max_d = max_d.max(distances.get(i, j));
                }
            }
            max_d / 3.0
        }
    };
    if !(cutoff > 0.0 && cutoff.is_finite()) {
        return Err(CovarianceError::InvalidModel(format!("cutoff = {cutoff}")));
    }

    let width = cutoff / opts.n_bins as f64;
    let mut lag_sum = vec![0.0; opts.n_bins];
    let mut sq_sum = vec![0.0; opts.n_bins];
    let mut count = vec![0usize; opts.n_bins];
    for (a, &(i, zi)) in present.iter().enumerate() {
        for &(j, zj) in &present[a + 1..] {
            let d = distances.get(i, j);
            if d > cutoff {
                continue;
            }
            let b = ((d / width) as usize).min(opts.n_bins - 1);
            lag_sum[b] += d;
            sq_sum[b] += (zi - zj) * (zi - zj);
            count[b] += 1;
        }
    }
    let bins = (0..opts.n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| VariogramBin {
            lag: lag_sum[b] / count[b] as f64,
            semivariance: sq_sum[b] / (2.0 * count[b] as f64),
            pairs: count[b],
        })
        .collect();

    let n = present.len() as f64;
    let mean = present.iter().map(|(_, v)| v).sum::<f64>() / n;
    let var = present.iter().map(|(_, v)| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(EmpiricalVariogram {
        bins,
        cutoff,
        sample_variance: var,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the largest component-wise relative
    /// parameter change of one step.
    pub tolerance: f64,
    pub fit_nugget: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 50,
            tolerance: 1e-6,
            fit_nugget: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitDiagnostics {
    pub converged: bool,
    pub iterations: usize,
    /// Relative size of the last parameter step.
    pub final_delta: f64,
    /// Weighted sum of squared residuals at the returned parameters.
    pub objective: f64,
}

/// Weighted least squares objective and its Jacobian for the spherical
/// semivariogram. Parameters are `[sigma2, alpha]` or `[sigma2, alpha, nugget]`.
struct SphericalFitProblem<'a> {
    bins: &'a [VariogramBin],
    sqrt_w: Vec<f64>,
    fit_nugget: bool,
}

const WEIGHT_FLOOR: f64 = 1e-12;
const CONVERGED_DAMPING: f64 = 1.0;
/// Fitted ranges beyond this multiple of the cutoff are reported as not
/// converged.
pub const MAX_RANGE_FACTOR: f64 = 10.0;

impl<'a> SphericalFitProblem<'a> {
    fn new(bins: &'a [VariogramBin], fit_nugget: bool) -> Self {
        let sqrt_w = bins
            .iter()
            .map(|b| (b.pairs as f64 / (b.semivariance * b.semivariance).max(WEIGHT_FLOOR)).sqrt())
            .collect();
        SphericalFitProblem {
            bins,
            sqrt_w,
            fit_nugget,
        }
    }

    fn n_params(&self) -> usize {
        if self.fit_nugget {
            3
        } else {
            2
        }
    }

    fn model(&self, p: &[f64]) -> SphericalModel {
        SphericalModel {
            sigma2: p[0],
            alpha: p[1],
            nugget: if self.fit_nugget { p[2] } else { 0.0 },
        }
    }

    fn residuals(&self, p: &[f64]) -> DVector<f64> {
        let m = self.model(p);
        DVector::from_iterator(
            self.bins.len(),
            self.bins.iter().zip(&self.sqrt_w).map(|(b, w)| {
                let g = if b.lag == 0.0 {
                    0.0
                } else {
                    m.sill() - m.covariance_unchecked(b.lag)
                };
                w * (b.semivariance - g)
            }),
        )
    }

    /// Jacobian of the residual vector.
    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let (s2, a) = (p[0], p[1]);
        let mut j = DMatrix::zeros(self.bins.len(), self.n_params());
        for (r, (b, w)) in self.bins.iter().zip(&self.sqrt_w).enumerate() {
            if b.lag == 0.0 {
                continue;
            }
            let u = b.lag / a;
            let (shape, dshape) = if u >= 1.0 {
                (1.0, 0.0)
            } else {
                (1.5 * u - 0.5 * u * u * u, 1.5 - 1.5 * u * u)
            };
            j[(r, 0)] = -w * shape;
            j[(r, 1)] = -w * s2 * dshape * (-b.lag / (a * a));
            if self.fit_nugget {
                j[(r, 2)] = -w;
            }
        }
        j
    }
}

fn relative_step(p: &[f64], step: &[f64]) -> f64 {
    let scale = p[0].abs();
    p.iter()
        .zip(step)
        .map(|(x, d)| d.abs() / x.abs().max(1e-12 * scale).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

/// Fits a spherical model to an empirical semivariogram.
///
/// `init` overrides the default start `(sample variance, cutoff / 2, 0)`.
/// Returns `Ok` with `converged = false` if the iteration cap is hit; only
/// structurally impossible fits are errors.
pub fn fit_spherical(
    emp: &EmpiricalVariogram,
    init: Option<SphericalModel>,
    opts: &FitOptions,
) -> Result<(SphericalModel, FitDiagnostics), CovarianceError> {
    if emp.bins.len() < 3 {
        return Err(CovarianceError::InsufficientBins(emp.bins.len()));
    }
    if emp.bins.iter().all(|b| b.semivariance == 0.0) {
        return Err(CovarianceError::DegenerateField);
    }
    let problem = SphericalFitProblem::new(&emp.bins, opts.fit_nugget);

    let start = init.unwrap_or_else(|| {
        let s2 = if emp.sample_variance > 0.0 {
            emp.sample_variance
        } else {
            emp.bins.iter().map(|b| b.semivariance).fold(0.0, f64::max)
        };
        SphericalModel {
            sigma2: s2,
            alpha: emp.cutoff / 2.0,
            nugget: 0.0,
        }
    });
    start.check()?;
    let mut p: Vec<f64> = vec![start.sigma2, start.alpha];
    if opts.fit_nugget {
        p.push(start.nugget);
    }
    if p[0] <= 0.0 {
        p[0] = emp.bins.iter().map(|b| b.semivariance).fold(0.0, f64::max);
    }

    let mut r = problem.residuals(&p);
    let mut obj = r.norm_squared();
    let mut damping = 1e-3;
    let mut growth = 2.0;
    let mut last_delta = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = obj == 0.0;

    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        let j = problem.jacobian(&p);
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        let diag_max = jtj.diagonal().max();
        let mut lhs = jtj.clone();
        for k in 0..lhs.nrows() {
            let d = jtj[(k, k)].max(1e-12 * diag_max).max(f64::MIN_POSITIVE);
            lhs[(k, k)] += damping * d;
        }
        let step = match lhs.cholesky() {
            Some(ch) => -ch.solve(&g),
            None => {
                damping *= 10.0;
                continue;
            }
        };
        let step: Vec<f64> = step.iter().copied().collect();
        let rel = relative_step(&p, &step);
        if !rel.is_finite() {
            break;
        }

        let mut trial: Vec<f64> = p.iter().zip(&step).map(|(x, d)| x + d).collect();
        if opts.fit_nugget && trial[2] < 0.0 {
            trial[2] = 0.0;
        }
        let feasible = trial[0] > 0.0 && trial[1] > 0.0 && trial.iter().all(|x| x.is_finite());
        // A short step only signals a minimum when it is close to the
        // Gauss-Newton step; heavy damping shrinks steps along flat ridges.
        if rel < opts.tolerance && damping <= CONVERGED_DAMPING {
            if feasible {
                let to = problem.residuals(&trial).norm_squared();
                if to <= obj {
                    p = trial;
                    obj = to;
                }
            }
            last_delta = rel;
            converged = true;
            break;
        }
        if feasible {
            let tr = problem.residuals(&trial);
            let to = tr.norm_squared();
            let predicted = obj - (&r + &j * DVector::from_column_slice(&step)).norm_squared();
            if to <= obj {
                let gain = if predicted > 0.0 { (obj - to) / predicted } else { 1.0 };
                p = trial;
                r = tr;
                obj = to;
                last_delta = rel;
                damping = (damping * (1.0 / 3.0f64).max(1.0 - (2.0 * gain - 1.0).powi(3))).max(1e-12);
                growth = 2.0;
                if obj == 0.0 {
                    converged = true;
                }
                continue;
            }
        }
        damping *= growth;
        growth *= 2.0;
        if damping > 1e16 {
            // Step size has collapsed without meeting the tolerance.
            break;
        }
    }

    let model = problem.model(&p);
    // Far past the last lag only sigma2/alpha is identified.
    if model.alpha > MAX_RANGE_FACTOR * emp.cutoff {
        converged = false;
    }
    Ok((
        model,
        FitDiagnostics {
            converged,
            iterations,
            final_delta: last_delta,
            objective: obj,
        },
    ))
}

/// GLS coefficients `(XᵀC⁻¹X)⁻¹XᵀC⁻¹z` with `C` built from `model` over
/// `distances` (diagonal jitter applied).
pub fn gls_trend(
    values: &[f64],
    design: &DMatrix<f64>,
    model: &SphericalModel,
    distances: &DistanceMatrix,
) -> Result<Vec<f64>, CovarianceError> {
    let c = linalg::covariance_matrix(model, distances);
    gls_trend_with_matrix(values, design, c)
}

/// GLS coefficients for an explicit covariance matrix.
pub fn gls_trend_with_matrix(
    values: &[f64],
    design: &DMatrix<f64>,
    cov: DMatrix<f64>,
) -> Result<Vec<f64>, CovarianceError> {
    let n = values.len();
    if design.nrows() != n || cov.nrows() != n || cov.ncols() != n {
        return Err(CovarianceError::Numerical("dimension mismatch".into()));
    }
    linalg::check_full_rank(design)?;
    let chol = linalg::factor(cov)?;
    let z = DVector::from_column_slice(values);
    let cinv_x = chol.solve(design);
    let cinv_z = chol.solve(&z);
    let xtcx = design.transpose() * &cinv_x;
    let xtcz = design.transpose() * &cinv_z;
    let beta = xtcx
        .cholesky()
        .ok_or(CovarianceError::SingularDesign)?
        .solve(&xtcz);
    Ok(beta.iter().copied().collect())
}

/// Result of alternating covariance fits and GLS trend estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendFit {
    pub beta: Vec<f64>,
    pub model: SphericalModel,
    pub diagnostics: FitDiagnostics,
    pub passes: usize,
}

/// Trend and residual covariance estimated together: start from the OLS
/// trend, fit the residual semivariogram, re-estimate the trend by GLS, and
/// repeat until the coefficients settle (at most `max_passes`). A residual
/// fit that fails to converge is an error.
pub fn iterated_gls(
    values: &[f64],
    design: &DMatrix<f64>,
    distances: &DistanceMatrix,
    vopts: &VariogramOptions,
    fopts: &FitOptions,
    max_passes: usize,
) -> Result<TrendFit, CovarianceError> {
    linalg::check_full_rank(design)?;
    let z = DVector::from_column_slice(values);
    let xtx = design.transpose() * design;
    let mut beta: Vec<f64> = xtx
        .cholesky()
        .ok_or(CovarianceError::SingularDesign)?
        .solve(&(design.transpose() * &z))
        .iter()
        .copied()
        .collect();

    let mut model: Option<SphericalModel> = None;
    let mut diagnostics = None;
    let mut passes = 0;
    while passes < max_passes.max(1) {
        passes += 1;
        let fitted = design * DVector::from_column_slice(&beta);
        let resid: Vec<Option<f64>> = (0..values.len()).map(|i| Some(values[i] - fitted[i])).collect();
        let emp = empirical_semivariogram(&resid, distances, vopts)?;
        let (m, diag) = fit_spherical(&emp, model, fopts)?;
        if !diag.converged {
            return Err(CovarianceError::NonConvergence(diag.iterations));
        }
        let next = gls_trend(values, design, &m, distances)?;
        let change = beta
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-12))
            .fold(0.0, f64::max);
        beta = next;
        model = Some(m);
        diagnostics = Some(diag);
        if change < fopts.tolerance {
            break;
        }
    }
    Ok(TrendFit {
        beta,
        model: model.expect("at least one pass"),
        diagnostics: diagnostics.expect("at least one pass"),
        passes,
    })
}
