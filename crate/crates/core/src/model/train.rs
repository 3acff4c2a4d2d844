use nalgebra::DVector;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_dataset, full_grad, network, MlpSpec, ModelError, ModelParams};
use crate::dataset::Dataset;
use crate::rng;

/// Mini-batch SGD settings.
///
/// Training is a pure function of `(spec, dataset, config)`: initialization
/// uses `seed` and epoch `e` shuffles with a stream derived from `(seed, e)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub l2_penalty: f64,
    /// Stop early once the full-data gradient norm falls below this value
    /// (checked after every epoch).
    #[serde(default)]
    pub tolerance: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            l2_penalty: 0.0,
            tolerance: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::InvalidConfig(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return fail(format!("l2_penalty must be non-negative, got {}", self.l2_penalty));
        }
        if let Some(tol) = self.tolerance {
            if !(tol > 0.0) {
                return fail(format!("tolerance must be positive, got {tol}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Empirical risk of the returned parameters on the training data.
    pub final_risk: f64,
    /// Full-data gradient norm, when a tolerance was configured.
    pub final_grad_norm: Option<f64>,
}

pub fn train(spec: &MlpSpec, data: &Dataset, config: &TrainConfig) -> Result<ModelParams, ModelError> {
    train_with_report(spec, data, config).map(|(params, _)| params)
}

pub fn train_with_report(
    spec: &MlpSpec,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainReport), ModelError> {
    config.validate()?;
    let mut params = ModelParams::init(spec, config.seed).with_l2_penalty(config.l2_penalty)?;
    check_dataset(&params, data)?;

    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = DVector::zeros(params.len());
    let mut epochs_run = 0;
    let mut grad_norm = None;

    for epoch in 0..config.epochs {
        let mut rng = rng::stream(config.seed, epoch as u64 + 1);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            step.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let z = &data.examples()[i];
                let cache = network::forward_unchecked(&params, &z.features);
                loss_sum += network::cross_entropy(cache.logits(), z.label);
                let mut delta = network::softmax(cache.logits());
                delta[z.label] -= 1.0;
                network::backward_into(&params, &cache, &delta, scale, step.as_mut_slice());
            }
            if config.l2_penalty != 0.0 {
                step.axpy(config.l2_penalty, params.theta(), 1.0);
            }
            params.theta_mut().axpy(-config.learning_rate, &step, 1.0);
        }
        epochs_run = epoch + 1;

        let mean_loss = loss_sum / n as f64;
        if !mean_loss.is_finite() || params.theta().iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Diverged {
                epoch,
                risk: mean_loss,
            });
        }
        if let Some(tol) = config.tolerance {
            let norm = full_grad(&params, data)?.norm();
            grad_norm = Some(norm);
            if norm < tol {
                break;
            }
        }
    }

    let final_risk = super::empirical_risk(&params, data)?;
    if !final_risk.is_finite() {
        return Err(ModelError::Diverged {
            epoch: epochs_run.saturating_sub(1),
            risk: final_risk,
        });
    }
    Ok((
        params,
        TrainReport {
            epochs_run,
            final_risk,
            final_grad_norm: grad_norm,
        },
    ))
}
