use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{check_len, IhvpError};
use crate::dataset::Dataset;
use crate::model::{self, ModelParams};
use crate::rng;

/// A symmetric PSD curvature matrix available only through products.
#[derive(Debug, Clone)]
pub enum CurvatureOperator<'a> {
    /// An explicit matrix; mini-batch requests return the full product.
    Dense(DMatrix<f64>),
    /// The model's Gauss-Newton Hessian over a dataset.
    GaussNewton { params: &'a ModelParams, data: &'a Dataset },
}

impl<'a> CurvatureOperator<'a> {
    pub fn gauss_newton(params: &'a ModelParams, data: &'a Dataset) -> Result<Self, IhvpError> {
        model::check_dataset(params, data)?;
        Ok(Self::GaussNewton { params, data })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Dense(m) => m.nrows(),
            Self::GaussNewton { params, .. } => params.len(),
        }
    }

    /// Number of examples a mini-batch can be drawn from.
    pub fn sample_count(&self) -> usize {
        match self {
            Self::Dense(_) => 1,
            Self::GaussNewton { data, .. } => data.len(),
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>, IhvpError> {
        check_len(self.dim(), v.len())?;
        match self {
            Self::Dense(m) => Ok(m * v),
            Self::GaussNewton { params, data } => Ok(model::gnh_vp(params, data, v)?),
        }
    }

    /// Unbiased estimate of the product from the examples at `indices`.
    pub fn apply_batch(&self, indices: &[usize], v: &DVector<f64>) -> Result<DVector<f64>, IhvpError> {
        check_len(self.dim(), v.len())?;
        match self {
            Self::Dense(m) => Ok(m * v),
            Self::GaussNewton { params, data } => Ok(model::gnh_vp_batch(params, data, indices, v)?),
        }
    }
}

/// Largest-eigenvalue estimate of a symmetric PSD operator by power iteration
/// (Rayleigh quotient of the final iterate). Deterministic in `seed`.
pub fn power_iteration(
    dim: usize,
    iterations: usize,
    seed: u64,
    mut apply: impl FnMut(&DVector<f64>) -> Result<DVector<f64>, IhvpError>,
) -> Result<f64, IhvpError> {
    let mut r = rng::seeded(seed);
    let mut x = DVector::from_fn(dim, |_, _| r.random_range(-1.0..1.0));
    let norm = x.norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    x /= norm;
    let mut estimate = 0.0;
    for _ in 0..iterations.max(1) {
        let y = apply(&x)?;
        estimate = x.dot(&y);
        let ny = y.norm();
        if !ny.is_finite() {
            return Err(IhvpError::NonFinite("power iteration"));
        }
        if ny == 0.0 {
            return Ok(0.0);
        }
        x = y / ny;
    }
    Ok(estimate)
}
