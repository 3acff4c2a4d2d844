use nalgebra::DVector;
use rand::Rng;

use super::{LayerShape, MlpSpec, ModelError};
use crate::rng;

/// Flat parameter vector `θ` plus the architecture that slices it into layers.
///
/// `l2_penalty` is part of the training objective: every per-sample loss
/// carries `(l2_penalty / 2)·‖θ‖²`, so gradients and curvature products
/// include the matching `l2_penalty·θ` and `l2_penalty·I` terms.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    spec: MlpSpec,
    theta: DVector<f64>,
    l2_penalty: f64,
}

impl ModelParams {
    pub fn new(spec: MlpSpec, theta: DVector<f64>) -> Result<Self, ModelError> {
        if theta.len() != spec.param_count() {
            return Err(ModelError::ParamLength {
                expected: spec.param_count(),
                found: theta.len(),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("parameters"));
        }
        Ok(Self {
            spec,
            theta,
            l2_penalty: 0.0,
        })
    }

    /// Uniform weights in `[-√(6/fan_in), √(6/fan_in)]`, zero bias column.
    pub fn init(spec: &MlpSpec, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let mut theta = DVector::zeros(spec.param_count());
        for layer in spec.layers() {
            let bound = (6.0 / layer.inputs as f64).sqrt();
            let weights = layer.outputs * layer.inputs;
            for k in 0..weights {
                theta[layer.offset + k] = rng.random_range(-bound..=bound);
            }
        }
        Self {
            spec: spec.clone(),
            theta,
            l2_penalty: 0.0,
        }
    }

    pub fn with_l2_penalty(mut self, l2_penalty: f64) -> Result<Self, ModelError> {
        if !(l2_penalty >= 0.0 && l2_penalty.is_finite()) {
            return Err(ModelError::InvalidConfig(format!(
                "l2 penalty must be finite and non-negative, got {l2_penalty}"
            )));
        }
        self.l2_penalty = l2_penalty;
        Ok(self)
    }

    /// Same architecture and objective, new parameter values.
    pub fn with_theta(&self, theta: DVector<f64>) -> Result<Self, ModelError> {
        let mut out = Self::new(self.spec.clone(), theta)?;
        out.l2_penalty = self.l2_penalty;
        Ok(out)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn l2_penalty(&self) -> f64 {
        self.l2_penalty
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Column-major weight block of one layer (bias is the last column).
    pub fn layer(&self, index: usize) -> &[f64] {
        &self.theta.as_slice()[self.spec.layers()[index].range()]
    }

    pub fn layer_shape(&self, index: usize) -> LayerShape {
        self.spec.layers()[index]
    }

    pub(crate) fn theta_mut(&mut self) -> &mut DVector<f64> {
        &mut self.theta
    }
}
