//! Influence scores.
//!
//! With `K = (G + λI)⁻¹` the damped inverse curvature at the trained
//! parameters, `g(z) = ∇_θ L(z, θ)` the gradient of a training point's share
//! of the objective (cross-entropy plus penalty) and `h(z) = ∇_θ ℓ(z, θ)` the
//! gradient of a test point's cross-entropy:
//!
//! * parameter influence of upweighting `z`: `−K g(z)`;
//! * loss influence on a test point: `I(z, z_test) = −g(z)ᵀ K h(z_test)`;
//! * self-influence: `g(z)ᵀ K g(z)`, the positive quadratic form, so that a
//!   descending ranking surfaces the points the model bends most to fit.
//!
//! Removing `z` from `n` training points moves the optimum by roughly
//! `(1/n) K g(z)`, and changes a test point's cross-entropy by roughly
//! `−(1/n) I(z, z_test)`. Without a penalty `g = h`.
//!
//! `K` is symmetric for every solver except stochastic LiSSA, so the loss
//! influence is computed by applying `K` to the test gradient only. This
//! makes [`influence_batch`] cost one solver application per test point and
//! keeps its entries bitwise equal to [`influence_loss`].

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Example};
use crate::ihvp::{CurvatureSolver, IhvpError};
use crate::model::{self, ModelError, ModelParams};

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error(transparent)]
    Ihvp(#[from] IhvpError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("solver dimension {solver} does not match the model's {params} parameters")]
    SolverMismatch { solver: usize, params: usize },
    #[error("non-finite influence score for training example {0}")]
    NonFinite(usize),
    #[error("training-set size must be at least 1")]
    EmptyTrainingSet,
}

/// One loss-influence score, as written to score files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfluenceRecord {
    pub train_index: usize,
    /// `None` for self-influence scores.
    pub test_index: Option<usize>,
    pub score: f64,
    pub solver: String,
    pub damping: f64,
}

/// `−(G + λI)⁻¹ ∇L(z)` for one training example.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfluence {
    pub train_index: usize,
    pub direction: DVector<f64>,
}

fn check_solver(solver: &CurvatureSolver<'_>, params: &ModelParams) -> Result<(), AttributionError> {
    if solver.dim() != params.len() {
        return Err(AttributionError::SolverMismatch {
            solver: solver.dim(),
            params: params.len(),
        });
    }
    Ok(())
}

/// Per-example training gradients at fixed parameters, tagged with the
/// checkpoint they were computed from.
#[derive(Debug, Clone)]
pub struct GradientCache {
    key: String,
    grads: Vec<DVector<f64>>,
}

impl GradientCache {
    pub fn build(params: &ModelParams, data: &Dataset, key: impl Into<String>) -> Result<Self, AttributionError> {
        model::check_dataset(params, data)?;
        let grads = data
            .examples()
            .par_iter()
            .map(|z| model::grad(params, z))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { key: key.into(), grads })
    }

    /// Identifier of the parameters the gradients belong to (e.g. a checkpoint hash).
    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&DVector<f64>> {
        self.grads.get(index)
    }
}

pub fn influence_params(
    solver: &CurvatureSolver<'_>,
    params: &ModelParams,
    z: &Example,
    train_index: usize,
) -> Result<ParamInfluence, AttributionError> {
    check_solver(solver, params)?;
    let g = model::grad(params, z)?;
    let direction = -solver.apply(&g)?;
    Ok(ParamInfluence { train_index, direction })
}

/// `(G + λI)⁻¹ ∇ℓ(z_test)`, the vector every training gradient is dotted with.
pub fn test_direction(
    solver: &CurvatureSolver<'_>,
    params: &ModelParams,
    z_test: &Example,
) -> Result<DVector<f64>, AttributionError> {
    check_solver(solver, params)?;
    Ok(solver.apply(&model::data_grad(params, z_test)?)?)
}

fn score(train_grad: &DVector<f64>, direction: &DVector<f64>) -> f64 {
    -train_grad.dot(direction)
}

/// `I(z_train, z_test) = −∇L(z_train)ᵀ (G + λI)⁻¹ ∇ℓ(z_test)`.
pub fn influence_loss(
    solver: &CurvatureSolver<'_>,
    params: &ModelParams,
    z_train: &Example,
    z_test: &Example,
) -> Result<f64, AttributionError> {
    let direction = test_direction(solver, params, z_test)?;
    Ok(score(&model::grad(params, z_train)?, &direction))
}

/// Loss influence of every training example on one test point.
pub fn influence_batch(
    solver: &CurvatureSolver<'_>,
    params: &ModelParams,
    z_test: &Example,
    data: &Dataset,
) -> Result<Vec<f64>, AttributionError> {
    model::check_dataset(params, data)?;
    let direction = test_direction(solver, params, z_test)?;
    data.examples()
        .par_iter()
        .enumerate()
        .map(|(i, z)| {
            let s = score(&model::grad(params, z)?, &direction);
            if s.is_finite() {
                Ok(s)
            } else {
                Err(AttributionError::NonFinite(i))
            }
        })
        .collect()
}

/// [`influence_batch`] using precomputed training gradients.
pub fn influence_batch_cached(
    solver: &CurvatureSolver<'_>,
    params: &ModelParams,
    z_test: &Example,
    cache: &GradientCache,
) -> Result<Vec<f64>, AttributionError> {
    let direction = test_direction(solver, params, z_test)?;
    cache
        .grads
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let s = score(g, &direction);
            if s.is_finite() {
                Ok(s)
            } else {
                Err(AttributionError::NonFinite(i))
            }
        })
        .collect()
}

/// `∇L(z)ᵀ (G + λI)⁻¹ ∇L(z)`.
pub fn self_influence(solver: &CurvatureSolver<'_>, params: &ModelParams, z: &Example) -> Result<f64, AttributionError> {
    check_solver(solver, params)?;
    Ok(solver.quadratic_form(&model::grad(params, z)?)?)
}

/// Self-influence of every example, in dataset order.
pub fn self_influence_all(
    solver: &CurvatureSolver<'_>,
    params: &ModelParams,
    data: &Dataset,
) -> Result<Vec<f64>, AttributionError> {
    model::check_dataset(params, data)?;
    check_solver(solver, params)?;
    data.examples()
        .par_iter()
        .enumerate()
        .map(|(i, z)| {
            let s = solver.quadratic_form(&model::grad(params, z)?)?;
            if s.is_finite() {
                Ok(s)
            } else {
                Err(AttributionError::NonFinite(i))
            }
        })
        .collect()
}

/// First-order estimate of `θ̂₋z − θ̂` when `z` is one of `n` training points:
/// upweighting by `ε = −1/n`.
pub fn loo_delta_approx(
    solver: &CurvatureSolver<'_>,
    params: &ModelParams,
    z: &Example,
    n: usize,
) -> Result<DVector<f64>, AttributionError> {
    if n == 0 {
        return Err(AttributionError::EmptyTrainingSet);
    }
    let influence = influence_params(solver, params, z, 0)?;
    Ok(influence.direction * (-1.0 / n as f64))
}

/// Indices sorted by descending score; ties keep ascending index order.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

pub fn rank_by_self_influence(
    solver: &CurvatureSolver<'_>,
    params: &ModelParams,
    data: &Dataset,
) -> Result<Vec<usize>, AttributionError> {
    Ok(rank_descending(&self_influence_all(solver, params, data)?))
}
