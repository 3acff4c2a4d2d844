//! Multilayer perceptrons with softmax cross-entropy: training, per-sample
//! gradients, and curvature-vector products.
//!
//! All reductions over a dataset run sequentially in index order, so every
//! function here is bit-reproducible for a given input.

mod network;
mod params;
mod spec;
mod train;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::dataset::{Dataset, Example};
use crate::rng;

pub use network::{cross_entropy, softmax, ForwardCache};
pub use params::ModelParams;
pub use spec::{Activation, LayerShape, MlpSpec};
pub use train::{train, train_with_report, TrainConfig, TrainReport};

pub(crate) use network::{forward_unchecked, layer_deltas};

/// Largest parameter count for which dense `p × p` curvature matrices are built.
pub const DENSE_PARAM_LIMIT: usize = 5000;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} parameters, found {found}")]
    ParamLength { expected: usize, found: usize },
    #[error("{what} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("training diverged at epoch {epoch}: empirical risk is {risk}")]
    Diverged { epoch: usize, risk: f64 },
    #[error("dense curvature needs p ≤ {limit}, model has p = {p}")]
    TooLarge { p: usize, limit: usize },
    #[error("index list is empty")]
    EmptyBatch,
    #[error("index {index} out of range for dataset of size {len}")]
    IndexOutOfRange { index: usize, len: usize },
}

fn check_features(params: &ModelParams, x: &[f64]) -> Result<(), ModelError> {
    let d = params.spec().input_dim();
    if x.len() != d {
        return Err(ModelError::DimensionMismatch {
            what: "feature vector",
            expected: d,
            found: x.len(),
        });
    }
    Ok(())
}

fn check_example(params: &ModelParams, z: &Example) -> Result<(), ModelError> {
    check_features(params, &z.features)?;
    let classes = params.spec().classes();
    if z.label >= classes {
        return Err(ModelError::LabelOutOfRange {
            label: z.label,
            classes,
        });
    }
    Ok(())
}

fn check_direction(params: &ModelParams, v: &DVector<f64>) -> Result<(), ModelError> {
    if v.len() != params.len() {
        return Err(ModelError::DimensionMismatch {
            what: "parameter direction",
            expected: params.len(),
            found: v.len(),
        });
    }
    Ok(())
}

/// Fails unless every example in `data` fits the model's input and output sizes.
pub fn check_dataset(params: &ModelParams, data: &Dataset) -> Result<(), ModelError> {
    let spec = params.spec();
    if data.dim() != spec.input_dim() {
        return Err(ModelError::DimensionMismatch {
            what: "dataset features",
            expected: spec.input_dim(),
            found: data.dim(),
        });
    }
    if data.classes() > spec.classes() {
        return Err(ModelError::LabelOutOfRange {
            label: data.classes() - 1,
            classes: spec.classes(),
        });
    }
    Ok(())
}

/// Logits for `x` together with every layer's activations and pre-activations.
pub fn forward(params: &ModelParams, x: &[f64]) -> Result<(Vec<f64>, ForwardCache), ModelError> {
    check_features(params, x)?;
    let cache = forward_unchecked(params, x);
    let logits = cache.logits().to_vec();
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("logits"));
    }
    Ok((logits, cache))
}

pub fn predict(params: &ModelParams, x: &[f64]) -> Result<usize, ModelError> {
    let (logits, _) = forward(params, x)?;
    Ok(argmax(&logits))
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Cross-entropy of one example, without the parameter penalty.
pub fn data_loss(params: &ModelParams, z: &Example) -> Result<f64, ModelError> {
    check_example(params, z)?;
    let cache = forward_unchecked(params, &z.features);
    Ok(cross_entropy(cache.logits(), z.label))
}

fn penalty(params: &ModelParams) -> f64 {
    0.5 * params.l2_penalty() * params.theta().norm_squared()
}

/// Per-sample loss `L(z, θ)`: cross-entropy plus `(l2/2)·‖θ‖²`.
pub fn loss(params: &ModelParams, z: &Example) -> Result<f64, ModelError> {
    Ok(data_loss(params, z)? + penalty(params))
}

/// Mean of [`loss`] over the dataset.
pub fn empirical_risk(params: &ModelParams, data: &Dataset) -> Result<f64, ModelError> {
    check_dataset(params, data)?;
    let mut total = 0.0;
    for z in data {
        let cache = forward_unchecked(params, &z.features);
        total += cross_entropy(cache.logits(), z.label);
    }
    Ok(total / data.len() as f64 + penalty(params))
}

/// Mean cross-entropy over the dataset (penalty excluded).
pub fn mean_data_loss(params: &ModelParams, data: &Dataset) -> Result<f64, ModelError> {
    Ok(empirical_risk(params, data)? - penalty(params))
}

pub fn accuracy(params: &ModelParams, data: &Dataset) -> Result<f64, ModelError> {
    check_dataset(params, data)?;
    let hits = data
        .iter()
        .filter(|z| argmax(forward_unchecked(params, &z.features).logits()) == z.label)
        .count();
    Ok(hits as f64 / data.len() as f64)
}

/// Add `scale · ∇CE(z)` into `acc`.
fn data_grad_into(params: &ModelParams, z: &Example, scale: f64, acc: &mut [f64]) {
    let cache = forward_unchecked(params, &z.features);
    let mut delta = softmax(cache.logits());
    delta[z.label] -= 1.0;
    network::backward_into(params, &cache, &delta, scale, acc);
}

/// Gradient of the cross-entropy term only.
pub fn data_grad(params: &ModelParams, z: &Example) -> Result<DVector<f64>, ModelError> {
    check_example(params, z)?;
    let mut g = DVector::zeros(params.len());
    data_grad_into(params, z, 1.0, g.as_mut_slice());
    Ok(g)
}

/// `∇_θ L(z, θ)` by backpropagation.
pub fn grad(params: &ModelParams, z: &Example) -> Result<DVector<f64>, ModelError> {
    let mut g = data_grad(params, z)?;
    if params.l2_penalty() != 0.0 {
        g.axpy(params.l2_penalty(), params.theta(), 1.0);
    }
    Ok(g)
}

/// Mean gradient over `indices`, accumulated in the order given.
pub fn batch_grad(params: &ModelParams, data: &Dataset, indices: &[usize]) -> Result<DVector<f64>, ModelError> {
    check_dataset(params, data)?;
    if indices.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut acc = DVector::zeros(params.len());
    for &i in indices {
        let g = grad(params, data.get(i).ok_or(ModelError::IndexOutOfRange { index: i, len: data.len() })?)?;
        acc += g;
    }
    Ok(acc / indices.len() as f64)
}

/// Mean gradient over the whole dataset.
pub fn full_grad(params: &ModelParams, data: &Dataset) -> Result<DVector<f64>, ModelError> {
    let indices: Vec<usize> = (0..data.len()).collect();
    batch_grad(params, data, &indices)
}

fn curvature_product(
    params: &ModelParams,
    data: &Dataset,
    indices: Option<&[usize]>,
    v: &DVector<f64>,
    gauss_newton: bool,
) -> Result<DVector<f64>, ModelError> {
    check_dataset(params, data)?;
    check_direction(params, v)?;
    let mut acc = DVector::zeros(params.len());
    let mut run = |z: &Example, scale: f64| {
        let cache = forward_unchecked(params, &z.features);
        if gauss_newton {
            network::gnh_vp_into(params, &cache, v.as_slice(), scale, acc.as_mut_slice());
        } else {
            network::hvp_into(params, &cache, z.label, v.as_slice(), scale, acc.as_mut_slice());
        }
    };
    match indices {
        None => {
            let scale = 1.0 / data.len() as f64;
            data.iter().for_each(|z| run(z, scale));
        }
        Some(indices) => {
            if indices.is_empty() {
                return Err(ModelError::EmptyBatch);
            }
            let scale = 1.0 / indices.len() as f64;
            for &i in indices {
                let z = data.get(i).ok_or(ModelError::IndexOutOfRange { index: i, len: data.len() })?;
                run(z, scale);
            }
        }
    }
    if params.l2_penalty() != 0.0 {
        acc.axpy(params.l2_penalty(), v, 1.0);
    }
    Ok(acc)
}

/// Exact Hessian of the empirical risk times `v`.
pub fn hvp(params: &ModelParams, data: &Dataset, v: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
    curvature_product(params, data, None, v, false)
}

/// Gauss-Newton Hessian of the empirical risk times `v`:
/// `(1/n) Σ Jᵢᵀ (diag(pᵢ) − pᵢpᵢᵀ) Jᵢ v + l2·v`.
pub fn gnh_vp(params: &ModelParams, data: &Dataset, v: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
    curvature_product(params, data, None, v, true)
}

/// [`gnh_vp`] restricted to the examples at `indices` (mini-batch estimate).
pub fn gnh_vp_batch(
    params: &ModelParams,
    data: &Dataset,
    indices: &[usize],
    v: &DVector<f64>,
) -> Result<DVector<f64>, ModelError> {
    curvature_product(params, data, Some(indices), v, true)
}

/// Draw a label from the model's predictive distribution at `x`.
pub fn sample_label(params: &ModelParams, x: &[f64], seed: u64) -> Result<usize, ModelError> {
    check_features(params, x)?;
    let cache = forward_unchecked(params, x);
    Ok(draw_label(&softmax(cache.logits()), seed))
}

pub(crate) fn draw_label(probs: &[f64], seed: u64) -> usize {
    let u: f64 = rng::seeded(seed).random();
    let mut cumulative = 0.0;
    for (c, &p) in probs.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return c;
        }
    }
    probs.len() - 1
}

/// Cross-entropy gradient at a label sampled from the model's own softmax.
///
/// Its second moment over the sampled label is the Gauss-Newton matrix of
/// the example; the `l2` penalty is excluded and handled analytically by the
/// curvature solvers.
pub fn sample_pseudo_gradient(params: &ModelParams, x: &[f64], seed: u64) -> Result<DVector<f64>, ModelError> {
    check_features(params, x)?;
    let cache = forward_unchecked(params, x);
    let mut delta = softmax(cache.logits());
    let label = draw_label(&delta, seed);
    delta[label] -= 1.0;
    let mut g = DVector::zeros(params.len());
    network::backward_into(params, &cache, &delta, 1.0, g.as_mut_slice());
    Ok(g)
}

/// Parameter-to-logit Jacobian at `x` (`C × p`).
pub fn logits_jacobian(params: &ModelParams, x: &[f64]) -> Result<DMatrix<f64>, ModelError> {
    check_features(params, x)?;
    let cache = forward_unchecked(params, x);
    let classes = params.spec().classes();
    let mut jac = DMatrix::zeros(classes, params.len());
    let mut row = vec![0.0; params.len()];
    for c in 0..classes {
        row.iter_mut().for_each(|v| *v = 0.0);
        let mut e = vec![0.0; classes];
        e[c] = 1.0;
        network::backward_into(params, &cache, &e, 1.0, &mut row);
        for (k, &v) in row.iter().enumerate() {
            jac[(c, k)] = v;
        }
    }
    Ok(jac)
}

fn dense_guard(params: &ModelParams) -> Result<(), ModelError> {
    if params.len() > DENSE_PARAM_LIMIT {
        return Err(ModelError::TooLarge {
            p: params.len(),
            limit: DENSE_PARAM_LIMIT,
        });
    }
    Ok(())
}

/// Dense Hessian of the empirical risk, column `j` being `hvp(e_j)`.
pub fn dense_hessian(params: &ModelParams, data: &Dataset) -> Result<DMatrix<f64>, ModelError> {
    dense_guard(params)?;
    let p = params.len();
    let mut out = DMatrix::zeros(p, p);
    let mut e = DVector::zeros(p);
    for j in 0..p {
        e[j] = 1.0;
        out.set_column(j, &hvp(params, data, &e)?);
        e[j] = 0.0;
    }
    Ok(out)
}

/// Dense Gauss-Newton Hessian assembled from per-example Jacobians,
/// `(1/n) Σ Jᵢᵀ (diag(pᵢ) − pᵢpᵢᵀ) Jᵢ + l2·I`.
pub fn dense_gnh(params: &ModelParams, data: &Dataset) -> Result<DMatrix<f64>, ModelError> {
    dense_guard(params)?;
    check_dataset(params, data)?;
    let p = params.len();
    let mut out = DMatrix::zeros(p, p);
    for z in data {
        let jac = logits_jacobian(params, &z.features)?;
        let probs = softmax(forward_unchecked(params, &z.features).logits());
        let h = DMatrix::from_diagonal(&DVector::from_column_slice(&probs))
            - DVector::from_column_slice(&probs) * DVector::from_column_slice(&probs).transpose();
        out.gemm_tr(1.0 / data.len() as f64, &jac, &(h * &jac), 1.0);
    }
    for j in 0..p {
        out[(j, j)] += params.l2_penalty();
    }
    let sym = (&out + out.transpose()) * 0.5;
    Ok(sym)
}
