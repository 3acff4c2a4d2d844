//! Damped inverse-curvature–vector products `(G + λI)⁻¹ v`.
//!
//! `G` is always the Gauss-Newton Hessian of the empirical risk (including
//! the model's `l2` term). Four routes are provided: a dense Cholesky solve
//! for desk-scale models, the LiSSA truncated Neumann recursion, and the
//! layer-wise K-FAC / EK-FAC Kronecker approximations. Error bounds for the
//! two approximate routes live in [`bounds`].

pub mod bounds;
mod dense;
mod kfac;
mod lissa;
mod operator;
mod solver;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelError;

pub use bounds::{
    eigenbasis_diagonal, ekfac_effective_eigenvalues, ekfac_error_bound, estimate_lissa_opnorm, exact_lissa_opnorm,
    lissa_error_bound,
};
pub use dense::{solve_dense, DenseSolver};
pub use kfac::{
    apply_ekfac_inverse, apply_kfac_inverse, ekfac_quadratic_form, fit_ekfac, fit_ekfac_with, fit_kfac,
    kfac_quadratic_form, pseudo_label_seed, EkfacLayer, EkfacState, KfacLayer, KfacState, LabelSampling,
};
pub use lissa::{lissa_solve, LissaConfig, LissaSolver};
pub use operator::{power_iteration, CurvatureOperator};
pub use solver::{CurvatureSolver, SolverKind};

#[derive(Debug, Error)]
pub enum IhvpError {
    #[error("damping must be positive and finite, got {0}")]
    InvalidDamping(f64),
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not square: {rows}×{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("vector has length {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("damped curvature is not positive definite")]
    NotPositiveDefinite,
    #[error(
        "LiSSA step size violates α(λ_max + λ) < 1: α = {alpha}, λ_max ≈ {lambda_max}, λ = {damping}"
    )]
    SpectralCondition { alpha: f64, lambda_max: f64, damping: f64 },
    #[error("LiSSA iterate became non-finite at iteration {iteration}; the step size is too large")]
    Diverged { iteration: usize },
    #[error("bound is void: ‖I − α(G + λI)‖ = {0} is not below 1")]
    BoundVoid(f64),
    #[error("diagonals differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("eigendecomposition failed for layer {layer}: {reason}")]
    Eigen { layer: usize, reason: String },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The `λ` of `G + λI`; always strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Damping(f64);

impl Damping {
    pub fn new(lambda: f64) -> Result<Self, IhvpError> {
        if lambda > 0.0 && lambda.is_finite() {
            Ok(Self(lambda))
        } else {
            Err(IhvpError::InvalidDamping(lambda))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Damping {
    type Error = IhvpError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<Damping> for f64 {
    fn from(d: Damping) -> f64 {
        d.0
    }
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<(), IhvpError> {
    if expected != found {
        return Err(IhvpError::DimensionMismatch { expected, found });
    }
    Ok(())
}
