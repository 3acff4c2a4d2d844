//! Influence-function data attribution for small multilayer perceptrons.
//!
//! The crate trains softmax classifiers deterministically, estimates how each
//! training example affects test losses through damped inverse-curvature
//! products (dense, LiSSA, K-FAC and EK-FAC), ranks examples by
//! self-influence to surface label noise, scores attributions with the
//! Linear Datamodeling Score against retrained models, and removes or
//! relabels training points with a single Newton step.

pub mod attribution;
pub mod dataset;
pub mod evaluation;
pub mod ihvp;
pub mod io;
pub mod model;
pub mod rng;
pub mod unlearning;

pub use dataset::{Dataset, DatasetError, Example};
pub use model::{MlpSpec, ModelError, ModelParams, TrainConfig};
