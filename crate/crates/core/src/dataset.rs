//! Labeled examples and datasets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("dataset must contain at least one example")]
    Empty,
    #[error("example {index} has {found} features, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("example {index} has label {label}, but the dataset has {classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("example {index} has a non-finite feature")]
    NonFinite { index: usize },
    #[error("index {index} out of range for dataset of size {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("mask length {found} does not match dataset size {expected}")]
    MaskLength { expected: usize, found: usize },
}

/// A single labeled point `(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
}

impl Example {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self { features, label }
    }

    pub fn with_label(&self, label: usize) -> Self {
        Self {
            features: self.features.clone(),
            label,
        }
    }
}

/// An ordered, validated collection of examples sharing a feature dimension
/// and class count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    dim: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, dim: usize, classes: usize) -> Result<Self, DatasetError> {
        if examples.is_empty() {
            return Err(DatasetError::Empty);
        }
        for (index, ex) in examples.iter().enumerate() {
            if ex.features.len() != dim {
                return Err(DatasetError::DimensionMismatch {
                    index,
                    expected: dim,
                    found: ex.features.len(),
                });
            }
            if ex.label >= classes {
                return Err(DatasetError::LabelOutOfRange {
                    index,
                    label: ex.label,
                    classes,
                });
            }
            if ex.features.iter().any(|v| !v.is_finite()) {
                return Err(DatasetError::NonFinite { index });
            }
        }
        Ok(Self {
            examples,
            dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    /// Always false: a `Dataset` holds at least one example.
    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn get(&self, index: usize) -> Option<&Example> {
        self.examples.get(index)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Example> {
        self.examples.iter()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// Examples at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self, DatasetError> {
        let mut out = Vec::with_capacity(indices.len());
        for &index in indices {
            let ex = self.examples.get(index).ok_or(DatasetError::IndexOutOfRange {
                index,
                len: self.len(),
            })?;
            out.push(ex.clone());
        }
        Self::new(out, self.dim, self.classes)
    }

    /// Examples whose mask entry is true, in original order.
    pub fn select_mask(&self, mask: &[bool]) -> Result<Self, DatasetError> {
        if mask.len() != self.len() {
            return Err(DatasetError::MaskLength {
                expected: self.len(),
                found: mask.len(),
            });
        }
        let indices: Vec<usize> = (0..self.len()).filter(|&i| mask[i]).collect();
        self.select(&indices)
    }

    /// All examples except `index`.
    pub fn without(&self, index: usize) -> Result<Self, DatasetError> {
        if index >= self.len() {
            return Err(DatasetError::IndexOutOfRange {
                index,
                len: self.len(),
            });
        }
        let indices: Vec<usize> = (0..self.len()).filter(|&i| i != index).collect();
        self.select(&indices)
    }

    /// Copy with the label of one example replaced.
    pub fn relabeled(&self, index: usize, label: usize) -> Result<Self, DatasetError> {
        if index >= self.len() {
            return Err(DatasetError::IndexOutOfRange {
                index,
                len: self.len(),
            });
        }
        if label >= self.classes {
            return Err(DatasetError::LabelOutOfRange {
                index,
                label,
                classes: self.classes,
            });
        }
        let mut examples = self.examples.clone();
        examples[index].label = label;
        Ok(Self {
            examples,
            dim: self.dim,
            classes: self.classes,
        })
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Example;
    type IntoIter = std::slice::Iter<'a, Example>;

    fn into_iter(self) -> Self::IntoIter {
        self.examples.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid_examples() {
        assert_eq!(Dataset::new(vec![], 2, 2), Err(DatasetError::Empty));
        let bad_dim = vec![Example::new(vec![1.0], 0)];
        assert!(matches!(
            Dataset::new(bad_dim, 2, 2),
            Err(DatasetError::DimensionMismatch { index: 0, .. })
        ));
        let bad_label = vec![Example::new(vec![1.0, 2.0], 0), Example::new(vec![0.0, 0.0], 2)];
        assert!(matches!(
            Dataset::new(bad_label, 2, 2),
            Err(DatasetError::LabelOutOfRange { index: 1, .. })
        ));
    }

    #[test]
    fn selection_preserves_order() {
        let ds = Dataset::new(
            (0..5).map(|i| Example::new(vec![i as f64], i % 2)).collect(),
            1,
            2,
        )
        .unwrap();
        let sub = ds.select_mask(&[true, false, true, false, true]).unwrap();
        assert_eq!(
            sub.iter().map(|e| e.features[0]).collect::<Vec<_>>(),
            vec![0.0, 2.0, 4.0]
        );
        assert_eq!(ds.without(1).unwrap().len(), 4);
        assert_eq!(ds.relabeled(0, 1).unwrap().get(0).unwrap().label, 1);
    }
}
