//! Dense matrix helpers shared by the GLS and kriging solvers.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::covariance::{CovarianceError, SphericalModel};
use crate::geo::DistanceMatrix;

/// Relative diagonal jitter added before factorisation.
pub const JITTER: f64 = 1e-10;

/// Station covariance matrix with `JITTER · σ²` on the diagonal.
pub fn covariance_matrix(model: &SphericalModel, distances: &DistanceMatrix) -> DMatrix<f64> {
    let n = distances.len();
    let jitter = JITTER * model.sigma2.max(f64::MIN_POSITIVE);
    DMatrix::from_fn(n, n, |i, j| {
        let c = model.covariance_unchecked(distances.get(i, j));
        if i == j {
            c + jitter
        } else {
            c
        }
    })
}

pub fn factor(cov: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, CovarianceError> {
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(CovarianceError::Numerical("non-finite covariance entry".into()));
    }
    Cholesky::new(cov).ok_or_else(|| {
        CovarianceError::Numerical("covariance matrix is not positive definite".into())
    })
}

/// Fails with `SingularDesign` unless the columns of `x` are linearly
/// independent (smallest/largest singular value above 1e-10).
pub fn check_full_rank(x: &DMatrix<f64>) -> Result<(), CovarianceError> {
    if x.ncols() == 0 || x.nrows() < x.ncols() {
        return Err(CovarianceError::SingularDesign);
    }
    let sv = x.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || min / max < 1e-10 {
        return Err(CovarianceError::SingularDesign);
    }
    Ok(())
}
