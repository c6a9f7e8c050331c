//! Conjugate Gaussian Bayesian linear regression over the library
//! coefficients.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Precision matrices with a larger 2-norm condition number are rejected.
pub const MAX_PRECISION_CONDITION: f64 = 1e14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BlrError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("covariance is not symmetric positive definite")]
    InvalidCovariance,
    #[error("likelihood noise must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("precision matrix is numerically singular (condition {condition:.3e})")]
    Degenerate { condition: f64 },
}

/// Gaussian belief `N(mean, cov)` over the coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self, BlrError> {
        let n = mean.len();
        if cov.shape() != (n, n) {
            return Err(BlrError::DimensionMismatch(format!("mean has {n} entries, covariance is {:?}", cov.shape())));
        }
        if !cov.iter().chain(mean.iter()).all(|v| v.is_finite()) {
            return Err(BlrError::InvalidCovariance);
        }
        if (&cov - cov.transpose()).amax() > 1e-12 * cov.amax().max(f64::MIN_POSITIVE) {
            return Err(BlrError::InvalidCovariance);
        }
        if cov.clone().cholesky().is_none() {
            return Err(BlrError::InvalidCovariance);
        }
        Ok(Self { mean, cov })
    }

    /// `N(mean, c I)`.
    pub fn isotropic(mean: DVector<f64>, c: f64) -> Result<Self, BlrError> {
        let n = mean.len();
        Self::new(mean, DMatrix::identity(n, n) * c)
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// One batch of observations `Y = X theta + noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionBatch {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub sigma: f64,
}

impl RegressionBatch {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, sigma: f64) -> Result<Self, BlrError> {
        if x.nrows() != y.len() {
            return Err(BlrError::DimensionMismatch(format!("X has {} rows, Y has {}", x.nrows(), y.len())));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(BlrError::InvalidSigma(sigma));
        }
        Ok(Self { x, y, sigma })
    }
}

/// Posterior of `prior` after observing `batch`.
///
/// The precision `X^T X / sigma^2 + Sigma0^{-1}` is factorized, never
/// inverted for the mean.
pub fn posterior_update(prior: &GaussianBelief, batch: &RegressionBatch) -> Result<GaussianBelief, BlrError> {
    let n = prior.dim();
    if batch.x.ncols() != n {
        return Err(BlrError::DimensionMismatch(format!("X has {} columns, belief has {n}", batch.x.ncols())));
    }
    let prior_chol = prior.cov.clone().cholesky().ok_or(BlrError::InvalidCovariance)?;
    let prior_precision = prior_chol.inverse();
    let s2 = batch.sigma * batch.sigma;
    let xt = batch.x.transpose();
    let precision = &xt * &batch.x / s2 + &prior_precision;
    let precision = (&precision + precision.transpose()) * 0.5;

    let eig = precision.clone().symmetric_eigen();
    let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v.abs())));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_PRECISION_CONDITION) {
        return Err(BlrError::Degenerate { condition });
    }
    let chol = precision.cholesky().ok_or(BlrError::Degenerate { condition })?;
    let rhs = &xt * &batch.y / s2 + &prior_precision * &prior.mean;
    let mean = chol.solve(&rhs);
    let cov = chol.inverse();
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianBelief { mean, cov })
}

/// The posterior mean.
pub fn point_estimate(belief: &GaussianBelief) -> DVector<f64> {
    belief.mean.clone()
}

/// Adds `N(0, (level / d * sum_k |X_kj|)^2)` to every entry of column `j`.
pub fn inject_noise<R: Rng + ?Sized>(x: &DMatrix<f64>, level: f64, rng: &mut R) -> DMatrix<f64> {
    let mut out = x.clone();
    let d = x.nrows();
    if level == 0.0 || d == 0 {
        return out;
    }
    for (j, column) in x.column_iter().enumerate() {
        let std = level / d as f64 * column.iter().map(|v| v.abs()).sum::<f64>();
        if !(std > 0.0) {
            continue;
        }
        let normal = Normal::new(0.0, std).expect("finite positive std");
        for i in 0..d {
            out[(i, j)] += normal.sample(rng);
        }
    }
    out
}
