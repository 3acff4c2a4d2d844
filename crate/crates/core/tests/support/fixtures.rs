//! Problem instances reused across test targets.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use influence::io::gaussian_blobs;
use influence::model::{Activation, MlpSpec, ModelParams, TrainConfig};
use influence::rng;
use influence::{Dataset, Example};

pub fn random_dataset(n: usize, dim: usize, classes: usize, seed: u64) -> Dataset {
    let mut r = rng::seeded(seed);
    let examples = (0..n)
        .map(|i| Example::new((0..dim).map(|_| r.random_range(-1.0..1.0)).collect(), i % classes))
        .collect();
    Dataset::new(examples, dim, classes).unwrap()
}

pub fn random_vector(len: usize, seed: u64) -> DVector<f64> {
    let mut r = rng::seeded(seed);
    DVector::from_fn(len, |_, _| r.random_range(-1.0..1.0))
}

/// `(layer_dims, activation)` pairs covering linear, single- and
/// two-hidden-layer networks with both activations.
pub fn shape_grid() -> Vec<(Vec<usize>, Activation)> {
    vec![
        (vec![3, 2], Activation::Relu),
        (vec![4, 3], Activation::Tanh),
        (vec![4, 3, 2], Activation::Relu),
        (vec![5, 4, 3], Activation::Tanh),
        (vec![3, 5, 4, 2], Activation::Tanh),
        (vec![6, 4, 3], Activation::Relu),
    ]
}

pub fn params_for(dims: &[usize], activation: Activation, seed: u64, l2: f64) -> ModelParams {
    let spec = MlpSpec::new(dims.to_vec(), activation).unwrap();
    ModelParams::init(&spec, seed).with_l2_penalty(l2).unwrap()
}

pub fn as_pairs(data: &Dataset) -> Vec<(Vec<f64>, usize)> {
    data.iter().map(|z| (z.features.clone(), z.label)).collect()
}

pub fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Full-batch gradient descent run to a gradient norm of 1e-12.
pub fn convex_train_config(l2: f64) -> TrainConfig {
    TrainConfig {
        learning_rate: 1.0,
        epochs: 50_000,
        batch_size: usize::MAX,
        seed: 0,
        l2_penalty: l2,
        tolerance: Some(1e-12),
    }
}

/// Two-class logistic regression on Gaussian blobs (means 3σ apart):
/// `(spec, train, held-out)`.
pub fn convex_benchmark(n: usize) -> (MlpSpec, Dataset, Dataset) {
    let spec = MlpSpec::linear(10, 2).unwrap();
    let train = gaussian_blobs(n, 10, 2, 3.0, 1).unwrap();
    let test = gaussian_blobs(100, 10, 2, 3.0, 2).unwrap();
    (spec, train, test)
}

/// A linear softmax model whose input weights are zero, so every example
/// has the same predictive distribution `p` (set by the bias) and the
/// Gauss-Newton matrix is exactly `mean(ā āᵀ) ⊗ (diag p − p pᵀ)`.
pub fn kronecker_fixture(l2: f64) -> (ModelParams, Dataset) {
    let spec = MlpSpec::linear(4, 3).unwrap();
    let mut theta = DVector::zeros(spec.param_count());
    let bias = spec.layers()[0].inputs * spec.layers()[0].outputs;
    for (k, b) in [0.4, -0.3, 0.1].into_iter().enumerate() {
        theta[bias + k] = b;
    }
    let params = ModelParams::new(spec, theta).unwrap().with_l2_penalty(l2).unwrap();
    (params, random_dataset(30, 4, 3, 11))
}

/// The `[6, 4, 3]` tanh network used for the LiSSA checks.
pub fn lissa_problem() -> (ModelParams, Dataset) {
    (params_for(&[6, 4, 3], Activation::Tanh, 2, 0.0), random_dataset(50, 6, 3, 5))
}
