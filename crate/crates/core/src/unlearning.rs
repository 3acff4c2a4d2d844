//! One-step Newton unlearning.
//!
//! With `K = (G + λI)⁻¹` and `n` the original training-set size (forgotten
//! points included):
//!
//! * removal: `θ_new = θ + (1/n) K Σ_{z∈F} ∇L(z, θ)`;
//! * label repair: `θ_new = θ + (1/n) K Σ_{z∈F} (∇L(z, θ) − ∇L(z̃, θ))`, where
//!   `z̃` carries the corrected label. Swapping `z` for `z̃` changes the risk by
//!   `(1/n)(L(z̃) − L(z))`, and this is the first-order shift of its optimum.
//!
//! Gradients are summed in index order and the solver is applied once, so
//! both updates are linear in the forget set.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::ihvp::{CurvatureSolver, IhvpError};
use crate::model::{self, ModelError, ModelParams};

#[derive(Debug, Error)]
pub enum UnlearningError {
    #[error("forget set is empty")]
    Empty,
    #[error("forget-set index {index} is out of range for {len} training examples")]
    OutOfRange { index: usize, len: usize },
    #[error("index {0} appears more than once in the forget set")]
    Duplicate(usize),
    #[error("corrected label for example {index} equals its current label {label}")]
    SameLabel { index: usize, label: usize },
    #[error("corrected label {label} for example {index} is not below the class count {classes}")]
    LabelOutOfRange { index: usize, label: usize, classes: usize },
    #[error("label repair needs corrected labels for every entry")]
    MissingLabels,
    #[error("solver dimension {solver} does not match the model's {params} parameters")]
    SolverMismatch { solver: usize, params: usize },
    #[error(transparent)]
    Ihvp(#[from] IhvpError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Training points to forget, optionally with corrected labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForgetSet {
    pub entries: Vec<ForgetEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForgetEntry {
    pub index: usize,
    /// Corrected label for label repair; `None` for removal.
    pub label: Option<usize>,
}

impl ForgetSet {
    pub fn removal(indices: impl IntoIterator<Item = usize>) -> Self {
        Self {
            entries: indices.into_iter().map(|index| ForgetEntry { index, label: None }).collect(),
        }
    }

    pub fn repair(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        Self {
            entries: pairs
                .into_iter()
                .map(|(index, label)| ForgetEntry {
                    index,
                    label: Some(label),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.index).collect()
    }

    /// Check indices are distinct and in range, and that corrected labels
    /// (where given) are valid and differ from the current ones.
    pub fn validate(&self, data: &Dataset) -> Result<(), UnlearningError> {
        if self.entries.is_empty() {
            return Err(UnlearningError::Empty);
        }
        let mut seen = vec![false; data.len()];
        for e in &self.entries {
            let z = data.get(e.index).ok_or(UnlearningError::OutOfRange {
                index: e.index,
                len: data.len(),
            })?;
            if std::mem::replace(&mut seen[e.index], true) {
                return Err(UnlearningError::Duplicate(e.index));
            }
            if let Some(label) = e.label {
                if label >= data.classes() {
                    return Err(UnlearningError::LabelOutOfRange {
                        index: e.index,
                        label,
                        classes: data.classes(),
                    });
                }
                if label == z.label {
                    return Err(UnlearningError::SameLabel { index: e.index, label });
                }
            }
        }
        Ok(())
    }
}

fn newton_step(
    solver: &CurvatureSolver<'_>,
    params: &ModelParams,
    n: usize,
    direction: DVector<f64>,
) -> Result<ModelParams, UnlearningError> {
    if solver.dim() != params.len() {
        return Err(UnlearningError::SolverMismatch {
            solver: solver.dim(),
            params: params.len(),
        });
    }
    let step = solver.apply(&direction)? / n as f64;
    Ok(params.with_theta(params.theta() + step)?)
}

/// `θ + (1/n) K Σ ∇L(z)` over the forget set; `params` is left untouched.
pub fn unlearn_remove(
    solver: &CurvatureSolver<'_>,
    params: &ModelParams,
    data: &Dataset,
    forget: &ForgetSet,
) -> Result<ModelParams, UnlearningError> {
    model::check_dataset(params, data)?;
    forget.validate(data)?;
    let mut total = DVector::zeros(params.len());
    for e in &forget.entries {
        total += model::grad(params, &data.examples()[e.index])?;
    }
    newton_step(solver, params, data.len(), total)
}

/// `θ + (1/n) K Σ (∇L(z) − ∇L(z̃))` over the forget set.
pub fn unlearn_relabel(
    solver: &CurvatureSolver<'_>,
    params: &ModelParams,
    data: &Dataset,
    forget: &ForgetSet,
) -> Result<ModelParams, UnlearningError> {
    model::check_dataset(params, data)?;
    forget.validate(data)?;
    let mut total = DVector::zeros(params.len());
    for e in &forget.entries {
        let label = e.label.ok_or(UnlearningError::MissingLabels)?;
        let z = &data.examples()[e.index];
        total += model::grad(params, z)? - model::grad(params, &z.with_label(label))?;
    }
    newton_step(solver, params, data.len(), total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Example;
    use crate::ihvp::Damping;
    use crate::model::MlpSpec;

    fn fixture() -> (ModelParams, Dataset, CurvatureSolver<'static>) {
        let examples = vec![
            Example::new(vec![1.0, 0.0], 0),
            Example::new(vec![0.0, 1.0], 1),
            Example::new(vec![1.0, 1.0], 1),
            Example::new(vec![-1.0, 0.5], 0),
        ];
        let data = Dataset::new(examples, 2, 2).unwrap();
        let params = ModelParams::init(&MlpSpec::linear(2, 2).unwrap(), 5).with_l2_penalty(0.1).unwrap();
        let solver = CurvatureSolver::exact(&params, &data, Damping::new(0.1).unwrap()).unwrap();
        (params, data, solver)
    }

    #[test]
    fn removal_is_additive() {
        let (params, data, solver) = fixture();
        let both = unlearn_remove(&solver, &params, &data, &ForgetSet::removal([0, 2])).unwrap();
        let a = unlearn_remove(&solver, &params, &data, &ForgetSet::removal([0])).unwrap();
        let b = unlearn_remove(&solver, &params, &data, &ForgetSet::removal([2])).unwrap();
        let summed = a.theta() + b.theta() - params.theta();
        assert!((both.theta() - summed).amax() < 1e-12);
    }

    #[test]
    fn relabel_round_trip_restores_parameters() {
        let (params, data, solver) = fixture();
        let there = unlearn_relabel(&solver, &params, &data, &ForgetSet::repair([(1, 0)])).unwrap();
        let flipped = data.relabeled(1, 0).unwrap();
        let back = unlearn_relabel(&solver, &params, &flipped, &ForgetSet::repair([(1, 1)])).unwrap();
        let round_trip = (there.theta() - params.theta()) + (back.theta() - params.theta());
        assert!(round_trip.amax() < 1e-14);
        assert!((there.theta() - params.theta()).amax() > 1e-3);
    }

    #[test]
    fn invalid_forget_sets_are_rejected() {
        let (params, data, solver) = fixture();
        let cases = [
            (ForgetSet::removal([]), "empty"),
            (ForgetSet::removal([9]), "range"),
            (ForgetSet::removal([1, 1]), "duplicate"),
            (ForgetSet::repair([(0, 0)]), "same"),
            (ForgetSet::repair([(0, 5)]), "label"),
        ];
        for (set, what) in cases {
            assert!(unlearn_relabel(&solver, &params, &data, &set).is_err(), "{what}");
        }
        assert!(matches!(
            unlearn_relabel(&solver, &params, &data, &ForgetSet::removal([0])),
            Err(UnlearningError::MissingLabels)
        ));
    }
}
